#pragma once

// RGB images in [0,1] and portable-anymap (P6 / P5) I/O.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "omg/checkpoint.hpp"
#include "omg/mask.hpp"

namespace omg {

struct Image {
  std::size_t height = 0, width = 0;
  std::vector<float> rgb;  // height * width * 3, row-major, channel-last

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.f) : height(h), width(w), rgb(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

namespace detail {

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

// Parses "P?\n<w> <h>\n<maxval>\n" allowing comments; returns payload offset.
inline std::size_t parse_pnm_header(const std::string& bytes, const char* magic, std::size_t& w,
                                    std::size_t& h) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0)
    throw ParseError(std::string("expected ") + magic + " portable anymap");
  std::size_t pos = 2;
  std::size_t vals[3];
  for (auto& v : vals) {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw ParseError("malformed anymap header");
    v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
  }
  if (vals[2] != 255) throw ParseError("only maxval 255 anymaps are supported");
  ++pos;  // single whitespace byte before payload
  w = vals[0];
  h = vals[1];
  return pos;
}

}  // namespace detail

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.rgb.size());
  for (float v : img.rgb) out.push_back(static_cast<char>(detail::to_byte(v)));
  return out;
}

inline Image decode_ppm(const std::string& bytes) {
  std::size_t w, h;
  const auto pos = detail::parse_pnm_header(bytes, "P6", w, h);
  if (bytes.size() - pos != w * h * 3) throw ParseError("P6 payload size mismatch");
  Image img(h, w);
  for (std::size_t i = 0; i < img.rgb.size(); ++i)
    img.rgb[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.f;
  return img;
}

inline std::string encode_pgm(const SegMask& m) {
  std::string out = "P5\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n";
  for (std::size_t i = 0; i < m.size(); ++i) out.push_back(static_cast<char>(m.test(i) ? 255 : 0));
  return out;
}

inline SegMask decode_pgm(const std::string& bytes) {
  std::size_t w, h;
  const auto pos = detail::parse_pnm_header(bytes, "P5", w, h);
  if (bytes.size() - pos != w * h) throw ParseError("P5 payload size mismatch");
  SegMask m(h, w);
  for (std::size_t i = 0; i < w * h; ++i) m.assign(i, static_cast<unsigned char>(bytes[pos + i]) >= 128);
  return m;
}

inline Image read_ppm(const std::string& path) { return decode_ppm(read_file(path)); }
inline void write_ppm(const std::string& path, const Image& img) { write_file(path, encode_ppm(img)); }
inline SegMask read_pgm(const std::string& path) { return decode_pgm(read_file(path)); }
inline void write_pgm(const std::string& path, const SegMask& m) { write_file(path, encode_pgm(m)); }

// Image quantized to 8 bits per channel, as it would be after a P6 round trip.
inline Image quantize(const Image& img) {
  Image q = img;
  for (auto& v : q.rgb) v = static_cast<float>(detail::to_byte(v)) / 255.f;
  return q;
}

// Blends `mask` (image resolution) over `img` in the given color.
inline Image overlay(const Image& img, const SegMask& mask, const float color[3], float alpha = 0.55f) {
  if (mask.height() != img.height || mask.width() != img.width)
    throw DimensionError("overlay: mask resolution differs from image");
  Image out = img;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (mask.get(y, x))
        for (std::size_t c = 0; c < 3; ++c)
          out.at(y, x, c) = (1.f - alpha) * img.at(y, x, c) + alpha * color[c];
  return out;
}

}  // namespace omg
