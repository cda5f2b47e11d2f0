#pragma once

// Central finite differences against reverse-mode gradients, 64-bit.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "omg/nn.hpp"

namespace omg::testing {

using Leaves = std::vector<Tensor<double>>;
using ScalarFn = std::function<Tensor<double>(Tape<double>&, const Leaves&)>;

// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
// dominating on round-off alone.
inline double rel_error(double a, double n, double floor = 1e-3) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = d(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

// Max relative error between backward() and central differences of `f` with
// respect to every element of every input.
inline double input_grad_error(const Leaves& inputs, const ScalarFn& f, double eps = 1e-4) {
  Tape<double> tape;
  Leaves leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x.detach()));
  tape.backward(f(tape, leaves));
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        Leaves moved;
        for (const auto& x : inputs) moved.push_back(x.detach());
        moved[k].mutable_data()[i] += delta;
        Tape<double> t(false);
        return f(t, moved).item();
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2 * eps);
      const double analytic = leaves[k].has_grad() ? leaves[k].grad()[i] : 0.0;
      worst = std::max(worst, rel_error(analytic, numeric));
    }
  }
  return worst;
}

// Same check against trainable parameters of a store, on `coords` randomly
// chosen elements. `loss` builds the scalar on the given tape.
inline double param_grad_error(ParamStore<double>& store, const std::function<Tensor<double>(Tape<double>&)>& loss,
                               std::size_t coords, std::mt19937_64& rng, double eps = 1e-5) {
  std::vector<ParamPtr<double>> params;
  for (const auto& p : store.all())
    if (p->trainable) params.push_back(p);
  Tape<double> tape;
  tape.backward(loss(tape));
  double worst = 0;
  for (std::size_t c = 0; c < coords; ++c) {
    const auto& p = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    const auto i = std::uniform_int_distribution<std::size_t>(0, p->value.size() - 1)(rng);
    const auto* bound = tape.find_bound(p.get());
    const double analytic = bound && bound->has_grad() ? bound->grad()[i] : 0.0;
    auto eval = [&](double delta) {
      const double keep = p->value[i];
      p->value.mutable_data()[i] = keep + delta;
      Tape<double> t(false);
      const double v = loss(t).item();
      p->value.mutable_data()[i] = keep;
      return v;
    };
    const double numeric = (eval(eps) - eval(-eps)) / (2 * eps);
    worst = std::max(worst, rel_error(analytic, numeric));
  }
  return worst;
}

// Random linear functional of a tensor, turning any op output into a scalar.
inline Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

}  // namespace omg::testing
