#pragma once

// Query-based perception decoder. Learnable object queries and visual-prompt
// queries alternate masked cross-attention over image cells, self-attention
// among themselves and an FFN (post-norm). Every layer's queries are decoded
// into mask logits (dot product of a mask embedding with the positional image
// features) and class logits.
//
// Attention restriction per query:
//   learnable / point prompt: all cells in layer 1, then the cells the
//     previous layer predicted as foreground (sigmoid > 0.5)
//   box prompt: cells whose centre lies inside the box, every layer
//   mask prompt: cells the prompt mask touches, every layer
// A row that would allow nothing falls back to allowing everything.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "omg/encoder.hpp"
#include "omg/mask.hpp"
#include "omg/nn.hpp"

namespace omg::perception {

enum class PromptKind { Point, Box, Mask };

inline const char* to_string(PromptKind k) {
  switch (k) {
    case PromptKind::Point: return "point";
    case PromptKind::Box: return "box";
    case PromptKind::Mask: return "mask";
  }
  return "?";
}

// Region designation in image pixel coordinates. Boxes are half-open
// [x0, x1) x [y0, y1).
struct VisualPrompt {
  PromptKind kind = PromptKind::Point;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // point uses (x0, y0)
  SegMask mask;                            // image resolution, kind == Mask

  static VisualPrompt point(double x, double y) { return {PromptKind::Point, x, y, x, y, {}}; }
  static VisualPrompt box(double x0, double y0, double x1, double y1) {
    return {PromptKind::Box, x0, y0, x1, y1, {}};
  }
  static VisualPrompt from_mask(SegMask m) { return {PromptKind::Mask, 0, 0, 0, 0, std::move(m)}; }

  void validate(std::size_t img_h, std::size_t img_w) const {
    const double W = static_cast<double>(img_w), H = static_cast<double>(img_h);
    switch (kind) {
      case PromptKind::Point:
        if (x0 < 0 || y0 < 0 || x0 > W || y0 > H) throw ContractError("point prompt outside image");
        break;
      case PromptKind::Box:
        if (x0 < 0 || y0 < 0 || x1 > W || y1 > H || !(x0 < x1) || !(y0 < y1))
          throw ContractError("box prompt must satisfy 0 <= x0 < x1 <= W and 0 <= y0 < y1 <= H");
        break;
      case PromptKind::Mask:
        if (mask.height() != img_h || mask.width() != img_w)
          throw ContractError("mask prompt resolution differs from image");
        if (mask.empty()) throw ContractError("mask prompt is empty");
        break;
    }
  }

  bool operator==(const VisualPrompt&) const = default;
};

// Cells a box or mask prompt covers on a (gh, gw) grid with `ds` pixels per
// cell. Points cover nothing here.
inline std::vector<std::uint8_t> prompt_cells(const VisualPrompt& p, std::size_t gh, std::size_t gw,
                                              std::size_t ds) {
  std::vector<std::uint8_t> cells(gh * gw, 0);
  if (p.kind == PromptKind::Box) {
    for (std::size_t y = 0; y < gh; ++y)
      for (std::size_t x = 0; x < gw; ++x) {
        const double cx = (static_cast<double>(x) + 0.5) * static_cast<double>(ds);
        const double cy = (static_cast<double>(y) + 0.5) * static_cast<double>(ds);
        cells[y * gw + x] = cx >= p.x0 && cx < p.x1 && cy >= p.y0 && cy < p.y1;
      }
  } else if (p.kind == PromptKind::Mask) {
    if (p.mask.height() != gh * ds || p.mask.width() != gw * ds)
      throw DimensionError("mask prompt resolution does not match feature grid");
    const auto cov = p.mask.coverage(ds);
    for (std::size_t i = 0; i < cov.size(); ++i) cells[i] = cov[i] > 0;
  }
  return cells;
}

// Pooling weights over cells that turn a prompt into a query: bilinear
// interpolation for points, a uniform mean over covered cells otherwise.
template <class T>
std::vector<T> prompt_pool_weights(const VisualPrompt& p, std::size_t gh, std::size_t gw, std::size_t ds) {
  std::vector<T> w(gh * gw, T{0});
  if (p.kind == PromptKind::Point) {
    const double u = std::clamp(p.x0 / static_cast<double>(ds) - 0.5, 0.0, static_cast<double>(gw - 1));
    const double v = std::clamp(p.y0 / static_cast<double>(ds) - 0.5, 0.0, static_cast<double>(gh - 1));
    const auto x0 = static_cast<std::size_t>(std::floor(u)), y0 = static_cast<std::size_t>(std::floor(v));
    const std::size_t x1 = std::min(x0 + 1, gw - 1), y1 = std::min(y0 + 1, gh - 1);
    const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
    w[y0 * gw + x0] += static_cast<T>((1 - fx) * (1 - fy));
    w[y0 * gw + x1] += static_cast<T>(fx * (1 - fy));
    w[y1 * gw + x0] += static_cast<T>((1 - fx) * fy);
    w[y1 * gw + x1] += static_cast<T>(fx * fy);
    return w;
  }
  const auto cells = prompt_cells(p, gh, gw, ds);
  const auto n = static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1));
  if (n == 0) throw DegeneratePromptError(std::string(to_string(p.kind)) + " prompt covers no feature cell");
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i]) w[i] = T{1} / static_cast<T>(n);
  return w;
}

// Query embedding [1, C] for a prompt sampled from f.
template <class T>
Tensor<T> prompt_to_query(const VisualPrompt& p, const FeatureMap<T>& f, std::size_t ds) {
  auto w = prompt_pool_weights<T>(p, f.h, f.w, ds);
  return matmul(Tensor<T>(Shape{1, f.cells()}, std::move(w)), f.data);
}

// Attention row for a prompt query. Never all-blocked.
inline std::vector<std::uint8_t> prompt_attention_mask(const VisualPrompt& p, std::size_t gh, std::size_t gw,
                                                       std::size_t ds) {
  std::vector<std::uint8_t> row = p.kind == PromptKind::Point ? std::vector<std::uint8_t>(gh * gw, 1)
                                                              : prompt_cells(p, gh, gw, ds);
  if (std::none_of(row.begin(), row.end(), [](auto v) { return v != 0; })) std::fill(row.begin(), row.end(), 1);
  return row;
}

enum class QueryOrigin { Learnable, Prompt };

template <class T>
struct LayerPrediction {
  Tensor<T> mask_logits;   // [N_q, HW]
  Tensor<T> class_logits;  // [N_q, classes]
};

template <class T>
struct ObjectQuerySet {
  Tensor<T> queries;       // [N_q, C]
  Tensor<T> mask_logits;   // [N_q, HW]
  Tensor<T> class_logits;  // [N_q, classes]
  Tensor<T> scores;        // [N_q], max class sigmoid, untracked
  std::vector<QueryOrigin> origin;
  std::vector<LayerPrediction<T>> layers;  // per decoder layer, last == final
  std::vector<std::vector<std::uint8_t>> layer1_allow;  // [N_q][HW]
  std::vector<T> layer1_attention;                      // [heads, N_q, HW] when captured

  std::size_t size() const { return origin.size(); }
  std::size_t cells() const { return mask_logits.dim(1); }

  // Binary mask of query q at threshold 0.5 of sigmoid (logit > 0).
  SegMask mask(std::size_t q, std::size_t gh, std::size_t gw) const {
    const std::size_t hw = cells();
    const T* m = mask_logits.ptr() + q * hw;
    return SegMask::from_predicate(gh, gw, [m](std::size_t i) { return m[i] > T{0}; });
  }
};

struct DecoderConfig {
  std::size_t channels = 32;
  std::size_t layers = 3;
  std::size_t learnable_queries = 8;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 64;
  std::size_t num_classes = 24;
  std::size_t max_prompts = 4;
  std::size_t grid_h = 8, grid_w = 8;
  std::size_t downsample = 8;  // image pixels per feature cell
};

template <class T>
SegMask binarize(const Tensor<T>& logits, std::size_t gh, std::size_t gw) {
  if (logits.size() != gh * gw) throw DimensionError("binarize: logits do not match grid");
  const T* m = logits.ptr();
  return SegMask::from_predicate(gh, gw, [m](std::size_t i) { return m[i] > T{0}; });
}

template <class T>
class OmgDecoder {
 public:
  OmgDecoder() = default;
  OmgDecoder(ParamStore<T>& store, DecoderConfig cfg, Rng& rng, const std::string& prefix = "dec")
      : cfg_(cfg), prefix_(prefix) {
    const std::size_t C = cfg_.channels;
    if (C % cfg_.heads) throw ConfigError("decoder: channels must be divisible by heads");
    query_feat_ = reg(store.add(prefix + ".query_feat", init::normal<T>({cfg_.learnable_queries, C}, 1.0, rng)));
    pos_ = reg(store.add(prefix + ".pos", init::normal<T>({cfg_.grid_h * cfg_.grid_w, C}, 0.5, rng)));
    prompt_type_ = reg(store.add(prefix + ".prompt_type", init::normal<T>({3, C}, 0.5, rng)));
    prompt_proj_ = lin(store, prefix + ".prompt_proj", C, C, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = prefix + ".layer" + std::to_string(l);
      Layer L;
      for (int a = 0; a < 2; ++a) {
        const std::string ap = p + (a == 0 ? ".cross" : ".self");
        L.attn[a] = {lin(store, ap + ".q", C, C, rng), lin(store, ap + ".k", C, C, rng),
                     lin(store, ap + ".v", C, C, rng), lin(store, ap + ".o", C, C, rng)};
        L.norm[a] = ln(store, ap + ".norm", C);
      }
      L.ffn = Mlp<T>(store, p + ".ffn", C, cfg_.ffn_hidden, C, rng);
      reg(L.ffn.fc1.weight), reg(L.ffn.fc1.bias), reg(L.ffn.fc2.weight), reg(L.ffn.fc2.bias);
      L.norm[2] = ln(store, p + ".ffn_norm", C);
      layers_.push_back(std::move(L));
    }
    out_norm_ = ln(store, prefix + ".norm", C);
    mask_head_ = Mlp<T>(store, prefix + ".mask_head", C, C, C, rng);
    reg(mask_head_.fc1.weight), reg(mask_head_.fc1.bias), reg(mask_head_.fc2.weight), reg(mask_head_.fc2.bias);
    class_head_ = lin(store, prefix + ".class_head", C, cfg_.num_classes, rng);
  }

  // Structural copy registered under `prefix` with identical values.
  OmgDecoder duplicate(ParamStore<T>& store, const std::string& prefix) const {
    Rng rng(0);
    OmgDecoder copy(store, cfg_, rng, prefix);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto src = params_[i]->value.data();
      auto dst = copy.params_[i]->value.mutable_data();
      std::copy(src.begin(), src.end(), dst.begin());
    }
    return copy;
  }

  const DecoderConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

  // Image features plus the cell positional embedding; keys, values and mask
  // features all read this.
  FeatureMap<T> positional(Tape<T>& tape, const FeatureMap<T>& f) const {
    if (f.h != cfg_.grid_h || f.w != cfg_.grid_w || f.c != cfg_.channels)
      throw DimensionError("decoder: feature map " + std::to_string(f.h) + "x" + std::to_string(f.w) + "x" +
                           std::to_string(f.c) + " does not match decoder grid " + std::to_string(cfg_.grid_h) +
                           "x" + std::to_string(cfg_.grid_w) + "x" + std::to_string(cfg_.channels));
    return {f.h, f.w, f.c, add(f.data, use(tape, pos_))};
  }

  ObjectQuerySet<T> decode(Tape<T>& tape, const FeatureMap<T>& f, const std::vector<VisualPrompt>& prompts,
                           bool capture_attention = false) const {
    if (prompts.size() > cfg_.max_prompts)
      throw CapacityError("decoder: " + std::to_string(prompts.size()) + " prompts exceed capacity " +
                          std::to_string(cfg_.max_prompts));
    const std::size_t HW = f.cells(), N = cfg_.learnable_queries, Nq = N + prompts.size();
    const auto mem = positional(tape, f);

    ObjectQuerySet<T> out;
    out.origin.assign(N, QueryOrigin::Learnable);
    std::vector<Tensor<T>> rows{use(tape, query_feat_)};
    std::vector<std::vector<std::uint8_t>> fixed_rows(Nq);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto& p = prompts[i];
      auto pooled = prompt_to_query(p, mem, cfg_.downsample);
      auto type = slice(use(tape, prompt_type_), 0, static_cast<std::size_t>(p.kind),
                        static_cast<std::size_t>(p.kind) + 1);
      rows.push_back(add(prompt_proj_(tape, pooled), type));
      out.origin.push_back(QueryOrigin::Prompt);
      if (p.kind != PromptKind::Point)
        fixed_rows[N + i] = prompt_attention_mask(p, f.h, f.w, cfg_.downsample);
    }
    Tensor<T> q = rows.size() == 1 ? rows[0] : concat(rows, 0);

    const Tensor<T>* prev_masks = nullptr;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      AttendMask am;
      am.allow.assign(Nq * HW, 1);
      for (std::size_t i = 0; i < Nq; ++i) {
        std::uint8_t* row = am.allow.data() + i * HW;
        if (!fixed_rows[i].empty()) {
          std::copy(fixed_rows[i].begin(), fixed_rows[i].end(), row);
        } else if (prev_masks) {
          const T* m = prev_masks->ptr() + i * HW;
          std::size_t on = 0;
          for (std::size_t j = 0; j < HW; ++j) on += (row[j] = m[j] > T{0});
          if (on == 0) std::fill(row, row + HW, 1);
        }
      }
      if (l == 0)
        for (std::size_t i = 0; i < Nq; ++i) out.layer1_allow.emplace_back(am.allow.begin() + i * HW,
                                                                            am.allow.begin() + (i + 1) * HW);
      const auto& L = layers_[l];
      std::vector<T>* capture = (l == 0 && capture_attention) ? &out.layer1_attention : nullptr;
      auto ca = attend(tape, L.attn[0], q, mem.data, am, capture);
      q = L.norm[0](tape, add(q, ca));
      auto sa = attend(tape, L.attn[1], q, q, AttendMask{}, nullptr);
      q = L.norm[1](tape, add(q, sa));
      q = L.norm[2](tape, add(q, L.ffn(tape, q)));

      auto normed = out_norm_(tape, q);
      LayerPrediction<T> pred{matmul_nt(mask_head_(tape, normed), mem.data), class_head_(tape, normed)};
      out.layers.push_back(pred);
      prev_masks = &out.layers.back().mask_logits;
      if (l + 1 == layers_.size()) {
        out.queries = normed;
        out.mask_logits = pred.mask_logits;
        out.class_logits = pred.class_logits;
      }
    }
    out.scores = scores_from_logits(out.class_logits);
    return out;
  }

  // Mask logits [HW] for an embedding already in query space.
  Tensor<T> decode_seg_embedding(Tape<T>& tape, const Tensor<T>& e, const FeatureMap<T>& f) const {
    auto row = reshape(e, Shape{1, cfg_.channels});
    auto mem = positional(tape, f);
    return reshape(matmul_nt(mask_head_(tape, row), mem.data), Shape{f.cells()});
  }

  // Same, against features that already carry the positional embedding.
  Tensor<T> decode_seg_embedding_positional(Tape<T>& tape, const Tensor<T>& e, const Tensor<T>& mem) const {
    auto row = reshape(e, Shape{1, cfg_.channels});
    return reshape(matmul_nt(mask_head_(tape, row), mem), Shape{mem.dim(0)});
  }

  static Tensor<T> scores_from_logits(const Tensor<T>& class_logits) {
    const std::size_t n = class_logits.dim(0), k = class_logits.dim(1);
    std::vector<T> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      T best = T{0};
      for (std::size_t j = 0; j < k; ++j) best = std::max(best, kernel::sigmoid(class_logits.at(i, j)));
      s[i] = best;
    }
    return Tensor<T>(Shape{n}, std::move(s));
  }

 private:
  struct Attn {
    Linear<T> q, k, v, o;
  };
  struct Layer {
    Attn attn[2];
    LayerNorm<T> norm[3];
    Mlp<T> ffn;
  };

  Tensor<T> attend(Tape<T>& tape, const Attn& a, const Tensor<T>& q, const Tensor<T>& kv, const AttendMask& m,
                   std::vector<T>* capture) const {
    return a.o(tape, attention(a.q(tape, q), a.k(tape, kv), a.v(tape, kv), cfg_.heads, m, capture));
  }

  ParamPtr<T> reg(ParamPtr<T> p) {
    params_.push_back(p);
    return p;
  }
  Linear<T> lin(ParamStore<T>& s, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    Linear<T> l(s, name, in, out, rng);
    reg(l.weight), reg(l.bias);
    return l;
  }
  LayerNorm<T> ln(ParamStore<T>& s, const std::string& name, std::size_t d) {
    LayerNorm<T> n(s, name, d);
    reg(n.gamma), reg(n.beta);
    return n;
  }

  DecoderConfig cfg_;
  std::string prefix_;
  std::vector<ParamPtr<T>> params_;
  ParamPtr<T> query_feat_, pos_, prompt_type_;
  Linear<T> prompt_proj_;
  std::vector<Layer> layers_;
  LayerNorm<T> out_norm_;
  Mlp<T> mask_head_;
  Linear<T> class_head_;
};

}  // namespace omg::perception
