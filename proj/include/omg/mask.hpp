#pragma once

#include <bit>
#include <cstdint>
#include <vector>

#include "omg/error.hpp"

namespace omg {

// Binary raster mask, row-major, packed 64 pixels per word.
class SegMask {
 public:
  SegMask() = default;
  SegMask(std::size_t h, std::size_t w) : h_(h), w_(w), bits_((h * w + 63) / 64, 0) {}

  std::size_t height() const { return h_; }
  std::size_t width() const { return w_; }
  std::size_t size() const { return h_ * w_; }

  bool get(std::size_t y, std::size_t x) const { return test(y * w_ + x); }
  void set(std::size_t y, std::size_t x, bool on = true) { assign(y * w_ + x, on); }
  bool test(std::size_t i) const { return (bits_[i >> 6] >> (i & 63)) & 1u; }
  void assign(std::size_t i, bool on) {
    const std::uint64_t bit = std::uint64_t{1} << (i & 63);
    if (on) bits_[i >> 6] |= bit; else bits_[i >> 6] &= ~bit;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto w : bits_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  bool empty() const { return count() == 0; }

  std::size_t intersection_count(const SegMask& o) const {
    check_same(o);
    std::size_t n = 0;
    for (std::size_t i = 0; i < bits_.size(); ++i) n += static_cast<std::size_t>(std::popcount(bits_[i] & o.bits_[i]));
    return n;
  }
  std::size_t union_count(const SegMask& o) const {
    check_same(o);
    std::size_t n = 0;
    for (std::size_t i = 0; i < bits_.size(); ++i) n += static_cast<std::size_t>(std::popcount(bits_[i] | o.bits_[i]));
    return n;
  }

  // Two empty masks are a perfect match.
  double iou(const SegMask& o) const {
    const auto u = union_count(o);
    return u == 0 ? 1.0 : static_cast<double>(intersection_count(o)) / static_cast<double>(u);
  }

  SegMask operator|(const SegMask& o) const {
    check_same(o);
    SegMask r = *this;
    for (std::size_t i = 0; i < bits_.size(); ++i) r.bits_[i] |= o.bits_[i];
    return r;
  }
  SegMask operator&(const SegMask& o) const {
    check_same(o);
    SegMask r = *this;
    for (std::size_t i = 0; i < bits_.size(); ++i) r.bits_[i] &= o.bits_[i];
    return r;
  }

  bool operator==(const SegMask&) const = default;

  // Cell-level mask: a cell is set when the fraction of set pixels in its
  // factor x factor block reaches `min_coverage` (strictly positive coverage
  // when min_coverage is 0).
  SegMask downsample(std::size_t factor, double min_coverage = 0.5) const {
    if (factor == 0 || h_ % factor || w_ % factor)
      throw DimensionError("SegMask::downsample: " + std::to_string(h_) + "x" + std::to_string(w_) +
                           " not divisible by " + std::to_string(factor));
    SegMask r(h_ / factor, w_ / factor);
    const auto cov = coverage(factor);
    for (std::size_t i = 0; i < cov.size(); ++i) {
      const double frac = static_cast<double>(cov[i]) / static_cast<double>(factor * factor);
      r.assign(i, min_coverage <= 0.0 ? cov[i] > 0 : frac >= min_coverage);
    }
    return r;
  }

  // Set-pixel count per factor x factor cell, cell-row-major.
  std::vector<std::size_t> coverage(std::size_t factor) const {
    const std::size_t gh = h_ / factor, gw = w_ / factor;
    std::vector<std::size_t> cov(gh * gw, 0);
    for (std::size_t y = 0; y < gh * factor; ++y)
      for (std::size_t x = 0; x < gw * factor; ++x)
        if (get(y, x)) ++cov[(y / factor) * gw + x / factor];
    return cov;
  }

  SegMask upsample(std::size_t factor) const {
    SegMask r(h_ * factor, w_ * factor);
    for (std::size_t y = 0; y < r.h_; ++y)
      for (std::size_t x = 0; x < r.w_; ++x) r.set(y, x, get(y / factor, x / factor));
    return r;
  }

  // Threshold-free constructor from per-cell decisions.
  template <class Pred>
  static SegMask from_predicate(std::size_t h, std::size_t w, Pred&& on) {
    SegMask m(h, w);
    for (std::size_t i = 0; i < h * w; ++i) m.assign(i, on(i));
    return m;
  }

 private:
  void check_same(const SegMask& o) const {
    if (h_ != o.h_ || w_ != o.w_)
      throw DimensionError("SegMask: resolution mismatch " + std::to_string(h_) + "x" + std::to_string(w_) +
                           " vs " + std::to_string(o.h_) + "x" + std::to_string(o.w_));
  }

  std::size_t h_ = 0, w_ = 0;
  std::vector<std::uint64_t> bits_;
};

}  // namespace omg
