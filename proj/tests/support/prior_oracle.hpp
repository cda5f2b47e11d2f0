#pragma once

// Per-pixel reimplementations of the mask score and the prior embedding,
// written as explicit loops over raw arrays.

#include <cmath>
#include <vector>

#include "omg/perception_prior.hpp"

namespace omg::testing::oracle {

template <class T>
std::vector<double> mask_score(const Tensor<T>& m, const Tensor<T>& s, perception::PriorStrategy strategy,
                               perception::MaskInput input) {
  using perception::PriorStrategy;
  const std::size_t nq = m.dim(0), hw = m.dim(1);
  std::vector<double> out(hw * nq, 0.0);
  if (strategy == PriorStrategy::None) return out;
  for (std::size_t p = 0; p < hw; ++p) {
    std::vector<double> prod(nq);
    for (std::size_t j = 0; j < nq; ++j) {
      const double logit = static_cast<double>(m[j * hw + p]);
      const double term = input == perception::MaskInput::Sigmoid ? 1.0 / (1.0 + std::exp(-logit)) : logit;
      prod[j] = term * static_cast<double>(s[j]);
    }
    if (strategy == PriorStrategy::Softmax) {
      double mx = prod[0];
      for (double v : prod) mx = v > mx ? v : mx;
      double z = 0;
      for (double v : prod) z += std::exp(v - mx);
      for (std::size_t j = 0; j < nq; ++j) out[p * nq + j] = std::exp(prod[j] - mx) / z;
    } else if (strategy == PriorStrategy::Argmax) {
      std::size_t best = 0;
      for (std::size_t j = 0; j < nq; ++j)
        if (prod[j] > prod[best]) best = j;
      out[p * nq + best] = 1.0;
    } else {
      double z = 0;
      for (double v : prod) z += std::abs(v);
      for (std::size_t j = 0; j < nq; ++j) out[p * nq + j] = z > 0 ? prod[j] / z : 0.0;
    }
  }
  return out;
}

// sum_j MS[p, j] * Q[j, c] + F[p, c]
template <class T>
std::vector<double> embed_prior(const Tensor<T>& f, const Tensor<T>& q, const Tensor<T>& m, const Tensor<T>& s,
                                perception::PriorStrategy strategy, perception::MaskInput input) {
  const std::size_t hw = f.dim(0), c = f.dim(1), nq = q.dim(0);
  const auto ms = oracle::mask_score(m, s, strategy, input);
  std::vector<double> out(hw * c);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t k = 0; k < c; ++k) {
      double acc = 0;
      for (std::size_t j = 0; j < nq; ++j) acc += ms[p * nq + j] * static_cast<double>(q[j * c + k]);
      out[p * c + k] = acc + static_cast<double>(f[p * c + k]);
    }
  return out;
}

}  // namespace omg::testing::oracle
