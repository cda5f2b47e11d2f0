#pragma once

// Image encoder: a stack of non-overlapping strided convolutions followed by
// space-to-depth (pixel shuffle) reduction and a learned linear projection
// back to the feature width.

#include <memory>
#include <string>
#include <vector>

#include "omg/image.hpp"
#include "omg/nn.hpp"

namespace omg::perception {

template <class T>
struct FeatureMap {
  std::size_t h = 0, w = 0, c = 0;
  Tensor<T> data;  // [h*w, c], y-major cell order

  std::size_t cells() const { return h * w; }
};

struct EncoderConfig {
  std::size_t patch_stride = 4;
  std::size_t shuffle_factor = 2;
  std::vector<std::size_t> stage_channels{16, 32};
  std::size_t out_channels = 32;

  std::size_t total_downsample() const { return patch_stride * shuffle_factor; }

  // Stride of each conv stage: the first stage absorbs whatever the later
  // stride-2 stages do not.
  std::vector<std::size_t> stage_strides() const {
    if (stage_channels.empty()) throw ConfigError("encoder: at least one conv stage required");
    const std::size_t later = std::size_t{1} << (stage_channels.size() - 1);
    if (patch_stride % later || patch_stride / later == 0)
      throw ConfigError("encoder: patch_stride " + std::to_string(patch_stride) + " incompatible with " +
                        std::to_string(stage_channels.size()) + " stages");
    std::vector<std::size_t> s(stage_channels.size(), 2);
    s[0] = patch_stride / later;
    return s;
  }

  void validate_image(std::size_t h, std::size_t w) const {
    const auto d = total_downsample();
    if (d == 0 || h == 0 || w == 0 || h % d || w % d)
      throw ConfigError("encoder: image " + std::to_string(h) + "x" + std::to_string(w) +
                        " not divisible by total downsample " + std::to_string(d));
  }

  std::size_t tokens_for(std::size_t h, std::size_t w) const {
    validate_image(h, w);
    return (h / total_downsample()) * (w / total_downsample());
  }
};

// Index map for space-to-depth on an (h, w, c) grid: output cell (Y, X) holds
// the r x r block's channels concatenated with dy outer and dx inner.
inline std::shared_ptr<const std::vector<std::size_t>> space_to_depth_index(std::size_t h, std::size_t w,
                                                                             std::size_t c, std::size_t r) {
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(h * w * c);
  for (std::size_t Y = 0; Y < h / r; ++Y)
    for (std::size_t X = 0; X < w / r; ++X)
      for (std::size_t dy = 0; dy < r; ++dy)
        for (std::size_t dx = 0; dx < r; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            idx->push_back(((Y * r + dy) * w + (X * r + dx)) * c + ch);
  return idx;
}

// Inverse permutation of space_to_depth_index for the coarse grid (h, w, c*r*r).
inline std::shared_ptr<const std::vector<std::size_t>> depth_to_space_index(std::size_t h, std::size_t w,
                                                                             std::size_t c, std::size_t r) {
  const auto fwd = space_to_depth_index(h * r, w * r, c, r);
  auto inv = std::make_shared<std::vector<std::size_t>>(fwd->size());
  for (std::size_t i = 0; i < fwd->size(); ++i) (*inv)[(*fwd)[i]] = i;
  return inv;
}

template <class T>
FeatureMap<T> pixel_shuffle_down(const FeatureMap<T>& f, std::size_t r) {
  if (r == 0 || f.h % r || f.w % r)
    throw DimensionError("pixel_shuffle_down: grid " + std::to_string(f.h) + "x" + std::to_string(f.w) +
                         " not divisible by " + std::to_string(r));
  FeatureMap<T> out{f.h / r, f.w / r, f.c * r * r, {}};
  out.data = gather(f.data, space_to_depth_index(f.h, f.w, f.c, r), Shape{out.h * out.w, out.c});
  return out;
}

template <class T>
FeatureMap<T> pixel_shuffle_up(const FeatureMap<T>& f, std::size_t r) {
  if (r == 0 || f.c % (r * r))
    throw DimensionError("pixel_shuffle_up: channels " + std::to_string(f.c) + " not divisible by " +
                         std::to_string(r * r));
  FeatureMap<T> out{f.h * r, f.w * r, f.c / (r * r), {}};
  out.data = gather(f.data, depth_to_space_index(f.h, f.w, out.c, r), Shape{out.h * out.w, out.c});
  return out;
}

template <class T>
Tensor<T> image_tensor(const Image& img) {
  std::vector<T> v(img.rgb.begin(), img.rgb.end());
  return Tensor<T>(Shape{img.height * img.width, 3}, std::move(v));
}

template <class T>
class VisualEncoder {
 public:
  VisualEncoder() = default;
  VisualEncoder(ParamStore<T>& store, EncoderConfig cfg, Rng& rng, const std::string& prefix = "enc")
      : cfg_(std::move(cfg)) {
    const auto strides = cfg_.stage_strides();
    std::size_t in = 3;
    for (std::size_t s = 0; s < strides.size(); ++s) {
      stages_.emplace_back(store, prefix + ".stage" + std::to_string(s), strides[s] * strides[s] * in,
                           cfg_.stage_channels[s], rng);
      in = cfg_.stage_channels[s];
    }
    proj_ = Linear<T>(store, prefix + ".shuffle_proj", in * cfg_.shuffle_factor * cfg_.shuffle_factor,
                      cfg_.out_channels, rng);
  }

  const EncoderConfig& config() const { return cfg_; }

  FeatureMap<T> encode(Tape<T>& tape, const Image& img) const {
    cfg_.validate_image(img.height, img.width);
    FeatureMap<T> f{img.height, img.width, 3, image_tensor<T>(img)};
    const auto strides = cfg_.stage_strides();
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      auto patches = pixel_shuffle_down(f, strides[s]);
      f = FeatureMap<T>{patches.h, patches.w, cfg_.stage_channels[s], gelu(stages_[s](tape, patches.data))};
    }
    auto shuffled = pixel_shuffle_down(f, cfg_.shuffle_factor);
    return FeatureMap<T>{shuffled.h, shuffled.w, cfg_.out_channels, proj_(tape, shuffled.data)};
  }

 private:
  EncoderConfig cfg_;
  std::vector<Linear<T>> stages_;
  Linear<T> proj_;
};

}  // namespace omg::perception
