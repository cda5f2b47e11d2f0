#pragma once

// Named parameters and the small set of layers every component is built from.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "omg/ops.hpp"

namespace omg {

using Rng = std::mt19937_64;

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

template <class T>
using ParamPtr = std::shared_ptr<Parameter<T>>;

// Insertion-ordered registry of every parameter in a model.
template <class T>
class ParamStore {
 public:
  ParamPtr<T> add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ContractError("duplicate parameter name " + name);
    auto p = std::make_shared<Parameter<T>>(Parameter<T>{name, std::move(value), true});
    index_[name] = params_.size();
    params_.push_back(p);
    return p;
  }

  ParamPtr<T> find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second];
  }

  const std::vector<ParamPtr<T>>& all() const { return params_; }

  // Sets trainable on every parameter whose name starts with `prefix`.
  void set_trainable(const std::string& prefix, bool on) {
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) p->trainable = on;
  }

  std::size_t count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (auto& p : params_)
      if (p->name.rfind(prefix, 0) == 0) n += p->value.size();
    return n;
  }

 private:
  std::vector<ParamPtr<T>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
Tensor<T> use(Tape<T>& tape, const ParamPtr<T>& p) {
  return tape.bind(p.get(), p->value, p->trainable);
}

namespace init {

template <class T>
Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual linear-layer default.
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> d(-b, b);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>(std::move(shape), std::move(v));
}

}  // namespace init

// y = x W + b with W stored [in, out].
template <class T>
struct Linear {
  ParamPtr<T> weight, bias;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true) {
    weight = store.add(name + ".weight", init::fan_in_uniform<T>({in, out}, in, rng));
    if (with_bias) bias = store.add(name + ".bias", init::fan_in_uniform<T>({out}, in, rng));
  }

  std::size_t in_dim() const { return weight->value.dim(0); }
  std::size_t out_dim() const { return weight->value.dim(1); }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    if (x.rank() != 2 || x.dim(1) != in_dim())
      throw DimensionError(weight->name + ": input " + shape_str(x.shape()) + " for weight " +
                           shape_str(weight->value.shape()));
    auto y = matmul(x, use(tape, weight));
    return bias ? add(y, use(tape, bias)) : y;
  }
};

template <class T>
struct LayerNorm {
  ParamPtr<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, std::size_t d) {
    gamma = store.add(name + ".gamma", Tensor<T>::full({d}, T{1}));
    beta = store.add(name + ".beta", Tensor<T>::zeros({d}));
  }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return layer_norm(x, use(tape, gamma), use(tape, beta));
  }
};

// Two-layer perceptron with GELU between the layers.
template <class T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t hidden,
      std::size_t out, Rng& rng)
      : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}

  std::size_t in_dim() const { return fc1.in_dim(); }
  std::size_t out_dim() const { return fc2.out_dim(); }

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return fc2(tape, gelu(fc1(tape, x)));
  }
};

}  // namespace omg
