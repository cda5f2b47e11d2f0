#pragma once

// Perception prior embedding: object queries are folded into the per-cell
// image features weighted by how strongly each query claims each cell.
//
//   MS   = normalize_over_queries( sigmoid(M)^T (.) S )      [HW, N_q]
//   T_pv = MS Q + F                                         [HW, C]
//
// and confident learnable queries become object-centric tokens T_ov.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "omg/decoder.hpp"

namespace omg::perception {

enum class PriorStrategy { None, Softmax, Argmax, L1Norm };

inline PriorStrategy parse_strategy(const std::string& s) {
  if (s == "none") return PriorStrategy::None;
  if (s == "softmax") return PriorStrategy::Softmax;
  if (s == "argmax") return PriorStrategy::Argmax;
  if (s == "l1norm") return PriorStrategy::L1Norm;
  throw ConfigError("unknown prior strategy '" + s + "' (none|softmax|argmax|l1norm)");
}

inline std::string to_string(PriorStrategy s) {
  switch (s) {
    case PriorStrategy::None: return "none";
    case PriorStrategy::Softmax: return "softmax";
    case PriorStrategy::Argmax: return "argmax";
    case PriorStrategy::L1Norm: return "l1norm";
  }
  return "?";
}

// Whether the mask term entering the score is sigmoid(M) or the raw logits.
enum class MaskInput { Sigmoid, Logits };

template <class T>
Tensor<T> mask_score(const Tensor<T>& mask_logits, const Tensor<T>& scores, PriorStrategy strategy,
                     MaskInput input = MaskInput::Sigmoid) {
  if (mask_logits.rank() != 2 || scores.rank() != 1 || scores.dim(0) != mask_logits.dim(0))
    throw DimensionError("mask_score: masks " + shape_str(mask_logits.shape()) + " vs scores " +
                         shape_str(scores.shape()));
  const std::size_t nq = mask_logits.dim(0), hw = mask_logits.dim(1);
  if (strategy == PriorStrategy::None) return Tensor<T>::zeros({hw, nq});
  auto mt = transpose(mask_logits);
  auto prod = mul(input == MaskInput::Sigmoid ? sigmoid(mt) : mt, scores);
  switch (strategy) {
    case PriorStrategy::Softmax: return softmax(prod, -1);
    case PriorStrategy::L1Norm: return l1_normalize(prod);
    case PriorStrategy::Argmax: {
      std::vector<T> onehot(hw * nq, T{0});
      for (std::size_t p = 0; p < hw; ++p) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < nq; ++j)
          if (prod.at(p, j) > prod.at(p, best)) best = j;
        onehot[p * nq + best] = T{1};
      }
      return Tensor<T>(Shape{hw, nq}, std::move(onehot));
    }
    case PriorStrategy::None: break;
  }
  return Tensor<T>::zeros({hw, nq});
}

template <class T>
Tensor<T> embed_prior(const Tensor<T>& features, const Tensor<T>& queries, const Tensor<T>& mask_logits,
                      const Tensor<T>& scores, PriorStrategy strategy, MaskInput input = MaskInput::Sigmoid) {
  if (features.rank() != 2 || queries.rank() != 2 || features.dim(1) != queries.dim(1))
    throw DimensionError("embed_prior: features " + shape_str(features.shape()) + " vs queries " +
                         shape_str(queries.shape()));
  if (mask_logits.dim(1) != features.dim(0) || mask_logits.dim(0) != queries.dim(0))
    throw DimensionError("embed_prior: masks " + shape_str(mask_logits.shape()) + " inconsistent with features " +
                         shape_str(features.shape()) + " and queries " + shape_str(queries.shape()));
  if (strategy == PriorStrategy::None) return features;
  return add(matmul(mask_score(mask_logits, scores, strategy, input), queries), features);
}

template <class T>
Tensor<T> embed_prior(const FeatureMap<T>& f, const ObjectQuerySet<T>& qs, PriorStrategy strategy,
                      MaskInput input = MaskInput::Sigmoid) {
  return embed_prior(f.data, qs.queries, qs.mask_logits, qs.scores, strategy, input);
}

template <class T>
struct VisualTokens {
  Tensor<T> pixel;                    // T_pv [HW, C]
  Tensor<T> object;                   // T_ov [K, C]; undefined when K == 0
  std::vector<std::size_t> selected;  // query indices behind T_ov, by descending score

  std::size_t object_count() const { return selected.size(); }
  std::size_t size() const { return pixel.dim(0) + object_count(); }
};

// Learnable-origin queries with score > tau, highest score first (ties by
// lower index), at most `cap`.
template <class T>
std::vector<std::size_t> select_foreground(const ObjectQuerySet<T>& qs, T tau, std::size_t cap) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < qs.size(); ++i)
    if (qs.origin[i] == QueryOrigin::Learnable && qs.scores[i] > tau) idx.push_back(i);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return qs.scores[a] > qs.scores[b]; });
  if (idx.size() > cap) idx.resize(cap);
  return idx;
}

template <class T>
VisualTokens<T> assemble_visual_tokens(const FeatureMap<T>& f, const ObjectQuerySet<T>& qs, PriorStrategy strategy,
                                       T tau, std::size_t cap, MaskInput input = MaskInput::Sigmoid) {
  VisualTokens<T> tv;
  tv.pixel = embed_prior(f, qs, strategy, input);
  tv.selected = select_foreground(qs, tau, cap);
  if (!tv.selected.empty()) {
    std::vector<int> rows(tv.selected.begin(), tv.selected.end());
    tv.object = index_rows(qs.queries, rows);
  }
  return tv;
}

}  // namespace omg::perception
