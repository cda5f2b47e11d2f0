#pragma once

// Differentiable operations on omg::Tensor. Each op validates shapes, computes
// its value eagerly and records a backward closure when any input is tracked.
//
// Broadcasting is limited to the second operand of a binary op being either a
// scalar or a vector matching the first operand's trailing axis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omg/tensor.hpp"

namespace omg {

namespace kernel {

// C[m,n] += A[m,k] B[k,n]
template <class T>
void gemm_nn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m,n] += A[m,k] B[n,k]^T
template <class T>
void gemm_nt(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s{0};
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[k,n] += A[m,k]^T B[m,n]
template <class T>
void gemm_tn(const T* __restrict a, const T* __restrict b, T* __restrict c, std::size_t m,
             std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// log(1 + exp(x)) without overflow
template <class T>
T softplus(T x) {
  return std::max(x, T{0}) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace kernel

namespace detail {

enum class Bcast { None, Scalar, Trailing };

inline Bcast broadcast_mode(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Bcast::None;
  if (numel(b) == 1 && (b.empty() || b.size() == 1)) return Bcast::Scalar;
  if (b.size() == 1 && !a.empty() && a.back() == b[0]) return Bcast::Trailing;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

inline std::size_t bidx(Bcast m, std::size_t i, std::size_t trailing) {
  switch (m) {
    case Bcast::None: return i;
    case Bcast::Scalar: return 0;
    case Bcast::Trailing: return i % trailing;
  }
  return i;
}

inline std::size_t norm_axis(long axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

// Splits a shape around `axis` into (outer, axis length, inner) extents.
inline void axis_extents(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& len,
                         std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

inline void require_rank(const Shape& s, std::size_t r, const char* op) {
  if (s.size() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (numel(a.shape()) < numel(b.shape())) return add(b, a);
  const auto mode = detail::broadcast_mode(a.shape(), b.shape(), "add");
  const std::size_t n = a.size(), tr = a.shape().empty() ? 1 : a.shape().back();
  std::vector<T> out(n);
  const T *pa = a.ptr(), *pb = b.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[detail::bidx(mode, i, tr)];
  return detail::finish<T>(a.shape(), std::move(out), {&a, &b},
                           [a, b, mode, tr](const std::vector<T>& g) {
                             if (auto* ga = detail::grad_buf(a))
                               for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                             if (auto* gb = detail::grad_buf(b))
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 (*gb)[detail::bidx(mode, i, tr)] += g[i];
                           });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  const auto mode = detail::broadcast_mode(a.shape(), b.shape(), "sub");
  const std::size_t n = a.size(), tr = a.shape().empty() ? 1 : a.shape().back();
  std::vector<T> out(n);
  const T *pa = a.ptr(), *pb = b.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[detail::bidx(mode, i, tr)];
  return detail::finish<T>(a.shape(), std::move(out), {&a, &b},
                           [a, b, mode, tr](const std::vector<T>& g) {
                             if (auto* ga = detail::grad_buf(a))
                               for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                             if (auto* gb = detail::grad_buf(b))
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 (*gb)[detail::bidx(mode, i, tr)] -= g[i];
                           });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (numel(a.shape()) < numel(b.shape())) return mul(b, a);
  const auto mode = detail::broadcast_mode(a.shape(), b.shape(), "mul");
  const std::size_t n = a.size(), tr = a.shape().empty() ? 1 : a.shape().back();
  std::vector<T> out(n);
  const T *pa = a.ptr(), *pb = b.ptr();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[detail::bidx(mode, i, tr)];
  return detail::finish<T>(a.shape(), std::move(out), {&a, &b},
                           [a, b, mode, tr](const std::vector<T>& g) {
                             const T *pa = a.ptr(), *pb = b.ptr();
                             if (auto* ga = detail::grad_buf(a))
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 (*ga)[i] += g[i] * pb[detail::bidx(mode, i, tr)];
                             if (auto* gb = detail::grad_buf(b))
                               for (std::size_t i = 0; i < g.size(); ++i)
                                 (*gb)[detail::bidx(mode, i, tr)] += g[i] * pa[i];
                           });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.size());
  const T* pa = a.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * s;
  return detail::finish<T>(a.shape(), std::move(out), {&a}, [a, s](const std::vector<T>& g) {
    if (auto* ga = detail::grad_buf(a))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * s;
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto y = std::make_shared<std::vector<T>>(x.size());
  const T* px = x.ptr();
  for (std::size_t i = 0; i < y->size(); ++i) (*y)[i] = kernel::sigmoid(px[i]);
  Tensor<T> out(x.shape(), *y);
  if (auto* tape = detail::common_tape<T>({&x}))
    tape->record(out, [x, y](const std::vector<T>& g) {
      if (auto* gx = detail::grad_buf(x))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * (*y)[i] * (T{1} - (*y)[i]);
    });
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  const T* px = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = px[i] > T{0} ? px[i] : T{0};
  return detail::finish<T>(x.shape(), std::move(out), {&x}, [x](const std::vector<T>& g) {
    const T* px = x.ptr();
    if (auto* gx = detail::grad_buf(x))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (px[i] > T{0}) (*gx)[i] += g[i];
  });
}

// tanh approximation of GELU
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  std::vector<T> out(x.size());
  const T* px = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = px[i];
    out[i] = T(0.5) * v * (T{1} + std::tanh(c * (v + k * v * v * v)));
  }
  return detail::finish<T>(x.shape(), std::move(out), {&x}, [x](const std::vector<T>& g) {
    const T* px = x.ptr();
    if (auto* gx = detail::grad_buf(x))
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = px[i];
        const T u = c * (v + k * v * v * v);
        const T th = std::tanh(u);
        const T du = c * (T{1} + T{3} * k * v * v);
        (*gx)[i] += g[i] * (T(0.5) * (T{1} + th) + T(0.5) * v * (T{1} - th * th) * du);
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s{0};
  for (T v : x.data()) s += v;
  return detail::finish<T>(Shape{}, {s}, {&x}, [x](const std::vector<T>& g) {
    if (auto* gx = detail::grad_buf(x))
      for (auto& v : *gx) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

// Sum over one axis; the axis is removed from the result shape.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, long axis_in) {
  const std::size_t axis = detail::norm_axis(axis_in, x.rank(), "sum_axis");
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, outer, len, inner);
  Shape os = x.shape();
  os.erase(os.begin() + static_cast<long>(axis));
  std::vector<T> out(outer * inner, T{0});
  const T* px = x.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += px[(o * len + l) * inner + i];
  return detail::finish<T>(std::move(os), std::move(out), {&x},
                           [x, outer, len, inner](const std::vector<T>& g) {
                             if (auto* gx = detail::grad_buf(x))
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t l = 0; l < len; ++l)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     (*gx)[(o * len + l) * inner + i] += g[o * inner + i];
                           });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, long axis) {
  const std::size_t a = detail::norm_axis(axis, x.rank(), "mean_axis");
  return scale(sum_axis(x, axis), T{1} / static_cast<T>(x.dim(a)));
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T{0});
  kernel::gemm_nn(a.ptr(), b.ptr(), out.data(), m, k, n);
  return detail::finish<T>(Shape{m, n}, std::move(out), {&a, &b},
                           [a, b, m, k, n](const std::vector<T>& g) {
                             if (auto* ga = detail::grad_buf(a))
                               kernel::gemm_nt(g.data(), b.ptr(), ga->data(), m, n, k);
                             if (auto* gb = detail::grad_buf(b))
                               kernel::gemm_tn(a.ptr(), g.data(), gb->data(), m, k, n);
                           });
}

// a[m,k] * b[n,k]^T
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: cannot multiply " + shape_str(a.shape()) + " by transpose of " +
                         shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  std::vector<T> out(m * n, T{0});
  kernel::gemm_nt(a.ptr(), b.ptr(), out.data(), m, k, n);
  return detail::finish<T>(Shape{m, n}, std::move(out), {&a, &b},
                           [a, b, m, k, n](const std::vector<T>& g) {
                             if (auto* ga = detail::grad_buf(a))
                               kernel::gemm_nn(g.data(), b.ptr(), ga->data(), m, n, k);
                             if (auto* gb = detail::grad_buf(b))
                               kernel::gemm_tn(g.data(), a.ptr(), gb->data(), m, n, k);
                           });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  const T* px = x.ptr();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = px[i * c + j];
  return detail::finish<T>(Shape{c, r}, std::move(out), {&x}, [x, r, c](const std::vector<T>& g) {
    if (auto* gx = detail::grad_buf(x))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)[i * c + j] += g[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto p = std::make_shared<TensorImpl<T>>();
  p->shape = std::move(shape);
  p->data = x.impl()->data;
  auto out = Tensor<T>::from_impl(std::move(p));
  if (auto* tape = detail::common_tape<T>({&x}))
    tape->record(out, [x](const std::vector<T>& g) {
      if (auto* gx = detail::grad_buf(x))
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    });
  return out;
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, long axis_in) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const std::size_t axis = detail::norm_axis(axis_in, parts[0].rank(), "concat");
  Shape os = parts[0].shape();
  os[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != os.size()) throw DimensionError("concat: rank mismatch " + shape_str(p.shape()));
    for (std::size_t d = 0; d < os.size(); ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        throw DimensionError("concat: incompatible shapes " + shape_str(parts[0].shape()) + " and " +
                             shape_str(p.shape()));
    os[axis] += p.dim(axis);
  }
  std::size_t outer, len, inner;
  detail::axis_extents(os, axis, outer, len, inner);
  std::vector<T> out(numel(os));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t pl = p.dim(axis);
    const T* src = p.ptr();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * pl * inner, src + (o + 1) * pl * inner,
                out.begin() + static_cast<long>((o * len + off) * inner));
    off += pl;
  }
  Tensor<T> result(os, std::move(out));
  Tape<T>* tape = nullptr;
  for (const auto& p : parts)
    if (auto* t = detail::common_tape<T>({&p})) {
      if (tape && tape != t) throw ContractError("concat: inputs from different tapes");
      tape = t;
    }
  if (tape)
    tape->record(result, [parts, offsets, axis, outer, len, inner](const std::vector<T>& g) {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        auto* gp = detail::grad_buf(parts[k]);
        if (!gp) continue;
        const std::size_t pl = parts[k].dim(axis);
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < pl * inner; ++i)
            (*gp)[o * pl * inner + i] += g[(o * len + offsets[k]) * inner + i];
      }
    });
  return result;
}

// Half-open range [begin, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, long axis_in, std::size_t begin, std::size_t end) {
  const std::size_t axis = detail::norm_axis(axis_in, x.rank(), "slice");
  if (begin > end || end > x.dim(axis))
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_str(x.shape()));
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, outer, len, inner);
  Shape os = x.shape();
  os[axis] = end - begin;
  const std::size_t sl = end - begin;
  std::vector<T> out(outer * sl * inner);
  const T* px = x.ptr();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(px + (o * len + begin) * inner, px + (o * len + end) * inner,
              out.begin() + static_cast<long>(o * sl * inner));
  return detail::finish<T>(std::move(os), std::move(out), {&x},
                           [x, outer, len, inner, begin, sl](const std::vector<T>& g) {
                             if (auto* gx = detail::grad_buf(x))
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t i = 0; i < sl * inner; ++i)
                                   (*gx)[(o * len + begin) * inner + i] += g[o * sl * inner + i];
                           });
}

// out.flat[i] = x.flat[index[i]]; duplicate indices accumulate in backward.
template <class T>
Tensor<T> gather(const Tensor<T>& x, std::shared_ptr<const std::vector<std::size_t>> index,
                 Shape shape) {
  if (numel(shape) != index->size())
    throw DimensionError("gather: index count does not match shape " + shape_str(shape));
  std::vector<T> out(index->size());
  const T* px = x.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if ((*index)[i] >= x.size()) throw DimensionError("gather: index out of range");
    out[i] = px[(*index)[i]];
  }
  return detail::finish<T>(std::move(shape), std::move(out), {&x},
                           [x, index](const std::vector<T>& g) {
                             if (auto* gx = detail::grad_buf(x))
                               for (std::size_t i = 0; i < g.size(); ++i) (*gx)[(*index)[i]] += g[i];
                           });
}

// Rows of a [V, D] table; also used as a general row selection.
template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const int> ids) {
  detail::require_rank(table.shape(), 2, "embedding_lookup");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idv(ids.begin(), ids.end());
  std::vector<T> out(idv.size() * d);
  const T* pt = table.ptr();
  for (std::size_t r = 0; r < idv.size(); ++r) {
    if (idv[r] < 0 || static_cast<std::size_t>(idv[r]) >= vocab)
      throw DimensionError("embedding_lookup: id " + std::to_string(idv[r]) + " outside table of " +
                           std::to_string(vocab) + " rows");
    std::copy(pt + idv[r] * d, pt + (idv[r] + 1) * d, out.begin() + static_cast<long>(r * d));
  }
  return detail::finish<T>(Shape{idv.size(), d}, std::move(out), {&table},
                           [table, idv, d](const std::vector<T>& g) {
                             if (auto* gt = detail::grad_buf(table))
                               for (std::size_t r = 0; r < idv.size(); ++r)
                                 for (std::size_t j = 0; j < d; ++j)
                                   (*gt)[idv[r] * d + j] += g[r * d + j];
                           });
}

template <class T>
Tensor<T> index_rows(const Tensor<T>& x, std::span<const int> rows) {
  return embedding_lookup(x, rows);
}

// ---------------------------------------------------------------------------
// Normalization

template <class T>
Tensor<T> softmax(const Tensor<T>& x, long axis_in) {
  const std::size_t axis = detail::norm_axis(axis_in, x.rank(), "softmax");
  std::size_t outer, len, inner;
  detail::axis_extents(x.shape(), axis, outer, len, inner);
  const T* px = x.ptr();
  auto y = std::make_shared<std::vector<T>>(x.size());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t l = 0; l < len; ++l) {
        const T v = px[(o * len + l) * inner + i];
        if (std::isnan(v)) throw NumericError("softmax: NaN input");
        mx = std::max(mx, v);
      }
      T s{0};
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t at = (o * len + l) * inner + i;
        (*y)[at] = std::exp(px[at] - mx);
        s += (*y)[at];
      }
      for (std::size_t l = 0; l < len; ++l) (*y)[(o * len + l) * inner + i] /= s;
    }
  Tensor<T> out(x.shape(), *y);
  if (auto* tape = detail::common_tape<T>({&x}))
    tape->record(out, [x, y, outer, len, inner](const std::vector<T>& g) {
      auto* gx = detail::grad_buf(x);
      if (!gx) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
          T dot{0};
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t at = (o * len + l) * inner + i;
            dot += g[at] * (*y)[at];
          }
          for (std::size_t l = 0; l < len; ++l) {
            const std::size_t at = (o * len + l) * inner + i;
            (*gx)[at] += (*y)[at] * (g[at] - dot);
          }
        }
    });
  return out;
}

// x / sum(|x|) along the last axis; rows with zero mass map to zeros.
template <class T>
Tensor<T> l1_normalize(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("l1_normalize: scalar input");
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  std::vector<T> out(x.size(), T{0});
  auto sums = std::make_shared<std::vector<T>>(rows, T{0});
  const T* px = x.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    T s{0};
    for (std::size_t j = 0; j < d; ++j) s += std::abs(px[r * d + j]);
    (*sums)[r] = s;
    if (s > T{0})
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = px[r * d + j] / s;
  }
  return detail::finish<T>(x.shape(), std::move(out), {&x},
                           [x, sums, rows, d](const std::vector<T>& g) {
                             auto* gx = detail::grad_buf(x);
                             if (!gx) return;
                             const T* px = x.ptr();
                             for (std::size_t r = 0; r < rows; ++r) {
                               const T s = (*sums)[r];
                               if (s <= T{0}) continue;
                               T gy{0};
                               for (std::size_t j = 0; j < d; ++j) gy += g[r * d + j] * px[r * d + j];
                               for (std::size_t k = 0; k < d; ++k) {
                                 const T xk = px[r * d + k];
                                 const T sgn = xk > T{0} ? T{1} : (xk < T{0} ? T{-1} : T{0});
                                 (*gx)[r * d + k] += g[r * d + k] / s - gy * sgn / (s * s);
                               }
                             }
                           });
}

// Normalizes over the last axis. gamma/beta may be undefined (no affine).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  if (x.rank() == 0) throw DimensionError("layer_norm: scalar input");
  const std::size_t d = x.shape().back(), rows = x.size() / d;
  if (gamma.defined() && (gamma.rank() != 1 || gamma.dim(0) != d))
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " for input " +
                         shape_str(x.shape()));
  if (beta.defined() && (beta.rank() != 1 || beta.dim(0) != d))
    throw DimensionError("layer_norm: beta " + shape_str(beta.shape()) + " for input " +
                         shape_str(x.shape()));
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.size());
  const T* px = x.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    T mu{0};
    for (std::size_t j = 0; j < d; ++j) mu += px[r * d + j];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) {
      const T c = px[r * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T xh = (px[r * d + j] - mu) * rs;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * (gamma.defined() ? gamma[j] : T{1}) + (beta.defined() ? beta[j] : T{0});
    }
  }
  return detail::finish<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [x, gamma, beta, xhat, rstd, rows, d](const std::vector<T>& g) {
        if (auto* gg = gamma.defined() ? detail::grad_buf(gamma) : nullptr)
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) (*gg)[j] += g[r * d + j] * (*xhat)[r * d + j];
        if (auto* gb = beta.defined() ? detail::grad_buf(beta) : nullptr)
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) (*gb)[j] += g[r * d + j];
        auto* gx = detail::grad_buf(x);
        if (!gx) return;
        std::vector<T> dxh(d);
        for (std::size_t r = 0; r < rows; ++r) {
          T m1{0}, m2{0};
          for (std::size_t j = 0; j < d; ++j) {
            dxh[j] = g[r * d + j] * (gamma.defined() ? gamma[j] : T{1});
            m1 += dxh[j];
            m2 += dxh[j] * (*xhat)[r * d + j];
          }
          m1 /= static_cast<T>(d);
          m2 /= static_cast<T>(d);
          for (std::size_t j = 0; j < d; ++j)
            (*gx)[r * d + j] += (*rstd)[r] * (dxh[j] - m1 - (*xhat)[r * d + j] * m2);
        }
      });
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  return layer_norm(x, Tensor<T>{}, Tensor<T>{}, eps);
}

// ---------------------------------------------------------------------------
// Attention

// Boolean allow-mask over [Lq, Lk]; empty means all positions allowed.
struct AttendMask {
  std::vector<std::uint8_t> allow;
  bool causal = false;
};

// Multi-head scaled dot-product attention on already-projected q[Lq,C],
// k[Lk,C], v[Lk,C]. Heads split C evenly. When `weights` is non-null the
// per-head attention probabilities are written there as [H, Lq, Lk].
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    const AttendMask& mask = {}, std::vector<T>* weights = nullptr) {
  detail::require_rank(q.shape(), 2, "attention");
  detail::require_rank(k.shape(), 2, "attention");
  detail::require_rank(v.shape(), 2, "attention");
  const std::size_t lq = q.dim(0), lk = k.dim(0), c = q.dim(1);
  if (k.dim(1) != c || v.dim(1) != c || v.dim(0) != lk || heads == 0 || c % heads)
    throw DimensionError("attention: q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) +
                         ", v " + shape_str(v.shape()) + " with " + std::to_string(heads) +
                         " heads");
  if (!mask.allow.empty() && mask.allow.size() != lq * lk)
    throw DimensionError("attention: mask size does not match [Lq, Lk]");
  const std::size_t hd = c / heads;
  const T sc = T{1} / std::sqrt(static_cast<T>(hd));
  auto probs = std::make_shared<std::vector<T>>(heads * lq * lk, T{0});
  std::vector<T> out(lq * c, T{0});
  const T *pq = q.ptr(), *pk = k.ptr(), *pv = v.ptr();
  auto allowed = [&](std::size_t i, std::size_t j) {
    if (mask.causal && j > i) return false;
    return mask.allow.empty() || mask.allow[i * lk + j] != 0;
  };
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < lq; ++i) {
      T* pr = probs->data() + (h * lq + i) * lk;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < lk; ++j) {
        if (!allowed(i, j)) continue;
        T s{0};
        for (std::size_t t = 0; t < hd; ++t) s += pq[i * c + off + t] * pk[j * c + off + t];
        pr[j] = s * sc;
        mx = std::max(mx, pr[j]);
      }
      if (mx == -std::numeric_limits<T>::infinity())
        throw ContractError("attention: query row with no allowed key");
      T z{0};
      for (std::size_t j = 0; j < lk; ++j) {
        if (!allowed(i, j)) {
          pr[j] = T{0};
          continue;
        }
        pr[j] = std::exp(pr[j] - mx);
        z += pr[j];
      }
      for (std::size_t j = 0; j < lk; ++j) {
        pr[j] /= z;
        if (pr[j] == T{0}) continue;
        for (std::size_t t = 0; t < hd; ++t) out[i * c + off + t] += pr[j] * pv[j * c + off + t];
      }
    }
  }
  if (weights) *weights = *probs;
  return detail::finish<T>(
      Shape{lq, c}, std::move(out), {&q, &k, &v},
      [q, k, v, probs, heads, lq, lk, c, hd, sc](const std::vector<T>& g) {
        auto* gq = detail::grad_buf(q);
        auto* gk = detail::grad_buf(k);
        auto* gv = detail::grad_buf(v);
        const T *pq = q.ptr(), *pk = k.ptr(), *pv = v.ptr();
        std::vector<T> dp(lk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t off = h * hd;
          for (std::size_t i = 0; i < lq; ++i) {
            const T* pr = probs->data() + (h * lq + i) * lk;
            T dot{0};
            for (std::size_t j = 0; j < lk; ++j) {
              if (pr[j] == T{0}) {
                dp[j] = T{0};
                continue;
              }
              T s{0};
              for (std::size_t t = 0; t < hd; ++t) s += g[i * c + off + t] * pv[j * c + off + t];
              dp[j] = s;
              dot += s * pr[j];
              if (gv)
                for (std::size_t t = 0; t < hd; ++t) (*gv)[j * c + off + t] += pr[j] * g[i * c + off + t];
            }
            for (std::size_t j = 0; j < lk; ++j) {
              if (pr[j] == T{0}) continue;
              const T ds = pr[j] * (dp[j] - dot) * sc;
              if (gq)
                for (std::size_t t = 0; t < hd; ++t) (*gq)[i * c + off + t] += ds * pk[j * c + off + t];
              if (gk)
                for (std::size_t t = 0; t < hd; ++t) (*gk)[j * c + off + t] += ds * pq[i * c + off + t];
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Fused losses

// Mean binary cross-entropy of sigmoid(logits) against targets in [0,1].
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets) {
  if (logits.size() != targets.size())
    throw DimensionError("bce_with_logits: " + std::to_string(logits.size()) + " logits vs " +
                         std::to_string(targets.size()) + " targets");
  if (logits.size() == 0) throw ContractError("bce_with_logits: empty input");
  std::vector<T> tg(targets.begin(), targets.end());
  const T* px = logits.ptr();
  T s{0};
  for (std::size_t i = 0; i < tg.size(); ++i) s += kernel::softplus(px[i]) - px[i] * tg[i];
  const T inv = T{1} / static_cast<T>(tg.size());
  return detail::finish<T>(Shape{}, {s * inv}, {&logits},
                           [logits, tg, inv](const std::vector<T>& g) {
                             if (auto* gx = detail::grad_buf(logits)) {
                               const T* px = logits.ptr();
                               for (std::size_t i = 0; i < tg.size(); ++i)
                                 (*gx)[i] += g[0] * inv * (kernel::sigmoid(px[i]) - tg[i]);
                             }
                           });
}

// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps), p = sigmoid(logits).
template <class T>
Tensor<T> dice_with_logits(const Tensor<T>& logits, std::span<const T> targets, T eps = T{1}) {
  if (logits.size() != targets.size())
    throw DimensionError("dice_with_logits: " + std::to_string(logits.size()) + " logits vs " +
                         std::to_string(targets.size()) + " targets");
  std::vector<T> tg(targets.begin(), targets.end());
  auto p = std::make_shared<std::vector<T>>(tg.size());
  const T* px = logits.ptr();
  T inter{0}, ps{0}, gs{0};
  for (std::size_t i = 0; i < tg.size(); ++i) {
    (*p)[i] = kernel::sigmoid(px[i]);
    inter += (*p)[i] * tg[i];
    ps += (*p)[i];
    gs += tg[i];
  }
  const T num = T{2} * inter + eps, den = ps + gs + eps;
  return detail::finish<T>(Shape{}, {T{1} - num / den}, {&logits},
                           [logits, tg, p, num, den](const std::vector<T>& g) {
                             if (auto* gx = detail::grad_buf(logits))
                               for (std::size_t i = 0; i < tg.size(); ++i) {
                                 const T dp = -(T{2} * tg[i] * den - num) / (den * den);
                                 (*gx)[i] += g[0] * dp * (*p)[i] * (T{1} - (*p)[i]);
                               }
                           });
}

// Mean softmax cross-entropy over rows with supervise[r] != 0.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> supervise) {
  detail::require_rank(logits.shape(), 2, "cross_entropy");
  const std::size_t rows = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != rows || supervise.size() != rows)
    throw DimensionError("cross_entropy: targets/mask length must equal " + std::to_string(rows));
  std::vector<std::size_t> active;
  for (std::size_t r = 0; r < rows; ++r)
    if (supervise[r]) {
      if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab)
        throw DimensionError("cross_entropy: target id out of range");
      active.push_back(r);
    }
  if (active.empty()) throw ContractError("cross_entropy: no supervised positions");
  auto prob = std::make_shared<std::vector<T>>(active.size() * vocab);
  const T* px = logits.ptr();
  T loss{0};
  for (std::size_t a = 0; a < active.size(); ++a) {
    const T* row = px + active[a] * vocab;
    T mx = *std::max_element(row, row + vocab);
    T z{0};
    for (std::size_t j = 0; j < vocab; ++j) {
      (*prob)[a * vocab + j] = std::exp(row[j] - mx);
      z += (*prob)[a * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) (*prob)[a * vocab + j] /= z;
    loss += -(row[targets[active[a]]] - mx - std::log(z));
  }
  const T inv = T{1} / static_cast<T>(active.size());
  std::vector<int> tg(targets.begin(), targets.end());
  return detail::finish<T>(Shape{}, {loss * inv}, {&logits},
                           [logits, active, prob, tg, vocab, inv](const std::vector<T>& g) {
                             auto* gx = detail::grad_buf(logits);
                             if (!gx) return;
                             for (std::size_t a = 0; a < active.size(); ++a) {
                               T* gr = gx->data() + active[a] * vocab;
                               for (std::size_t j = 0; j < vocab; ++j)
                                 gr[j] += g[0] * inv * (*prob)[a * vocab + j];
                               gr[tg[active[a]]] -= g[0] * inv;
                             }
                           });
}

// Mean squared difference over all elements.
template <class T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("mse: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const auto d = sub(a, b);
  return mean(mul(d, d));
}

}  // namespace omg
