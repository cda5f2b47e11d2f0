#pragma once

// Named-tensor container.
//
//   "OMGT"            4 bytes
//   version           u32
//   count             u32
//   count entries of:
//     name_len        u32, then name_len bytes of UTF-8
//     rank            u32
//     dims            rank x u32
//     values          prod(dims) x f32
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "omg/nn.hpp"

namespace omg {

inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw ParseError("container: truncated at byte " + std::to_string(pos));
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline std::string encode_container(const std::vector<NamedTensor>& entries) {
  std::string out = "OMGT";
  detail::put_u32(out, kContainerVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    std::size_t n = 1;
    for (auto d : e.dims) n *= d;
    if (n != e.values.size()) throw DimensionError("container: entry " + e.name + " size mismatch");
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    detail::put_u32(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) detail::put_u32(out, d);
    for (float f : e.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<NamedTensor> decode_container(const std::string& in) {
  if (in.size() < 12 || in.compare(0, 4, "OMGT") != 0) throw ParseError("container: bad magic");
  std::size_t pos = 4;
  const auto version = detail::get_u32(in, pos);
  if (version != kContainerVersion)
    throw ParseError("container: unsupported version " + std::to_string(version));
  const auto count = detail::get_u32(in, pos);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    const auto len = detail::get_u32(in, pos);
    if (pos + len > in.size()) throw ParseError("container: truncated name");
    e.name = in.substr(pos, len);
    pos += len;
    const auto rank = detail::get_u32(in, pos);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.dims.push_back(detail::get_u32(in, pos));
      n *= e.dims.back();
    }
    if (pos + 4 * n > in.size()) throw ParseError("container: truncated values for " + e.name);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) e.values[k] = std::bit_cast<float>(detail::get_u32(in, pos));
    out.push_back(std::move(e));
  }
  if (pos != in.size()) throw ParseError("container: trailing bytes");
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// FNV-1a over the f32 little-endian encoding of the values.
template <class T>
std::uint64_t checksum(std::span<const T> values) {
  std::uint64_t h = 1469598103934665603ull;
  for (T v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  }
  return h;
}

// Combined checksum of all parameters under a name prefix.
template <class T>
std::uint64_t checksum(const ParamStore<T>& store, const std::string& prefix) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : store.all()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    h ^= checksum<T>(p->value.data());
    h *= 1099511628211ull;
  }
  return h;
}

template <class T>
std::vector<NamedTensor> to_entries(const ParamStore<T>& store) {
  std::vector<NamedTensor> out;
  for (const auto& p : store.all()) {
    NamedTensor e;
    e.name = p->name;
    for (auto d : p->value.shape()) e.dims.push_back(static_cast<std::uint32_t>(d));
    for (T v : p->value.data()) e.values.push_back(static_cast<float>(v));
    out.push_back(std::move(e));
  }
  return out;
}

// Copies values into same-named parameters. Entries absent from the store
// are ignored unless `strict`; store parameters absent from the file are left
// untouched (they keep their initialization).
template <class T>
std::size_t load_entries(ParamStore<T>& store, const std::vector<NamedTensor>& entries,
                         bool strict = false) {
  std::size_t loaded = 0;
  for (const auto& e : entries) {
    auto p = store.find(e.name);
    if (!p) {
      if (strict) throw ParseError("checkpoint: unknown tensor " + e.name);
      continue;
    }
    Shape s(e.dims.begin(), e.dims.end());
    if (s != p->value.shape())
      throw DimensionError("checkpoint: " + e.name + " has shape " + shape_str(s) + ", model expects " +
                           shape_str(p->value.shape()));
    auto w = p->value.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(e.values[i]);
    ++loaded;
  }
  return loaded;
}

}  // namespace omg
