#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Values are immutable once
// created; every op allocates a fresh output. Tensors created through a Tape
// with requires_grad=true are leaves; ops whose inputs require grad record a
// backward closure on the inputs' tape. A tensor without a tape is a constant
// and may be shared freely between threads.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "omg/error.hpp"

namespace omg {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
class Tape;

template <class T>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  Tape<T>* tape = nullptr;
  std::size_t node_id = static_cast<std::size_t>(-1);
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (numel(shape) != values.size())
      throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    impl_->shape = std::move(shape);
    impl_->data = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(Shape shape) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}));
  }
  static Tensor full(Shape shape, T v) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, {v}); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data->size(); }

  std::span<const T> data() const { return {impl_->data->data(), impl_->data->size()}; }
  // Only for storage that no recorded op depends on (parameters between
  // steps, freshly built constants).
  std::span<T> mutable_data() { return {impl_->data->data(), impl_->data->size()}; }
  const T* ptr() const { return impl_->data->data(); }

  T item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return (*impl_->data)[0];
  }
  T operator[](std::size_t i) const { return (*impl_->data)[i]; }
  T at(std::size_t r, std::size_t c) const { return (*impl_->data)[r * impl_->shape.back() + c]; }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const T> grad() const { return {impl_->grad.data(), impl_->grad.size()}; }
  Tape<T>* tape() const { return impl_ ? impl_->tape : nullptr; }
  std::size_t node_id() const { return impl_->node_id; }

  // Copy of the values as an untracked constant.
  Tensor detach() const { return Tensor(shape(), *impl_->data); }
  // Same values and storage under a different shape, untracked.
  Tensor view_as_constant() const {
    Tensor t;
    t.impl_ = std::make_shared<TensorImpl<T>>();
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<TensorImpl<T>> p) {
    Tensor t;
    t.impl_ = std::move(p);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(const std::vector<T>& out_grad)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Tensor<T> leaf(Shape shape, std::vector<T> values, bool requires_grad = true) {
    return leaf(Tensor<T>(std::move(shape), std::move(values)), requires_grad);
  }

  // Leaf sharing `value`'s storage; gradient lives on the leaf only.
  Tensor<T> leaf(const Tensor<T>& value, bool requires_grad = true) {
    auto p = std::make_shared<TensorImpl<T>>();
    p->shape = value.shape();
    p->data = value.impl()->data;
    p->requires_grad = requires_grad && recording_;
    p->tape = this;
    p->node_id = next_id_++;
    leaves_.push_back(p);
    return Tensor<T>::from_impl(std::move(p));
  }

  // Per-tape binding of a long-lived value (a model parameter). Repeated
  // binds of the same key return the same leaf.
  Tensor<T> bind(const void* key, const Tensor<T>& value, bool trainable) {
    auto it = bound_.find(key);
    if (it != bound_.end()) return it->second;
    Tensor<T> t = trainable && recording_ ? leaf(value, true) : value.view_as_constant();
    bound_.emplace(key, t);
    bound_order_.push_back(key);
    return t;
  }
  const std::vector<const void*>& bound_keys() const { return bound_order_; }
  const Tensor<T>& bound(const void* key) const { return bound_.at(key); }
  const Tensor<T>* find_bound(const void* key) const {
    auto it = bound_.find(key);
    return it == bound_.end() ? nullptr : &it->second;
  }

  // Registers `out` as a node (inputs were checked by the caller).
  void record(const Tensor<T>& out, Backward fn) {
    out.impl()->requires_grad = true;
    out.impl()->tape = this;
    out.impl()->node_id = next_id_++;
    nodes_.push_back(Node{out.impl(), std::move(fn)});
  }

  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    if (!loss.requires_grad()) return;  // nothing on the tape depends on a trainable leaf
    if (loss.tape() != this) throw ContractError("backward: loss was produced on a different tape");
    auto& g = loss.impl()->grad;
    if (g.empty()) g.assign(1, T{0});
    g[0] += T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (it->out->grad.empty()) continue;
      it->fn(it->out->grad);
    }
  }

 private:
  struct Node {
    std::shared_ptr<TensorImpl<T>> out;
    Backward fn;
  };
  bool recording_;
  std::size_t next_id_ = 0;
  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<TensorImpl<T>>> leaves_;
  std::unordered_map<const void*, Tensor<T>> bound_;
  std::vector<const void*> bound_order_;
};

namespace detail {

// Lazily sized gradient buffer for `t`, or nullptr when t takes no gradient.
template <class T>
std::vector<T>* grad_buf(const Tensor<T>& t) {
  if (!t.requires_grad()) return nullptr;
  auto& g = t.impl()->grad;
  if (g.empty()) g.assign(t.size(), T{0});
  return &g;
}

template <class T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const auto* t : inputs) {
    if (!t || !t->defined() || !t->requires_grad()) continue;
    if (tape && t->tape() != tape) throw ContractError("op mixes tensors from different tapes");
    tape = t->tape();
  }
  return tape && tape->recording() ? tape : nullptr;
}

// Wraps a computed value and, when any input is tracked, records `fn`.
template <class T, class Fn>
Tensor<T> finish(Shape shape, std::vector<T> values, std::initializer_list<const Tensor<T>*> inputs,
                 Fn&& fn) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (Tape<T>* tape = common_tape<T>(inputs)) tape->record(out, std::forward<Fn>(fn));
  return out;
}

}  // namespace detail

}  // namespace omg
