// Copyright 2026 The vqforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vqforge/error.hpp"
#include "vqforge/rng.hpp"
#include "vqforge/transform.hpp"

namespace vqforge {

using Bytes = std::vector<std::uint8_t>;

// Little-endian serialisation into a growing byte buffer.
class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void str(std::string_view s) {
    u64(s.size());
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  const Bytes& bytes() const& { return bytes_; }
  Bytes bytes() && { return std::move(bytes_); }

 private:
  Bytes bytes_;
};

// Bounds-checked little-endian reader. Every failure reports its offset.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return data_.size() - offset_; }
  bool done() const { return offset_ == data_.size(); }

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::memcmp(data_.data() + offset_, tag.data(), tag.size()) != 0) {
      throw ParseError("bad magic, expected \"" + std::string(tag) + "\"", offset_);
    }
    offset_ += tag.size();
  }

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[offset_ + i]) << (8 * i);
    offset_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[offset_ + i]) << (8 * i);
    offset_ += 8;
    return v;
  }
  double f32() { return static_cast<double>(std::bit_cast<float>(u32())); }

  std::span<const std::uint8_t> raw(std::uint64_t n) {
    need(n, "payload");
    auto out = data_.subspan(offset_, static_cast<std::size_t>(n));
    offset_ += static_cast<std::size_t>(n);
    return out;
  }
  std::string str() {
    const auto n = u64();
    auto bytes = raw(n);
    return std::string(bytes.begin(), bytes.end());
  }

  // Element count that must fit in what is left, at `width` bytes each.
  std::uint64_t count(std::uint64_t n, std::uint64_t width, const char* what) {
    if (width != 0 && n > remaining() / width) {
      throw ParseError(std::string("truncated ") + what + ": " + std::to_string(n) + " elements declared", offset_);
    }
    return n;
  }

  void expect_end(const char* what) {
    if (!done()) throw ParseError(std::string("trailing bytes after ") + what, offset_);
  }

 private:
  void need(std::uint64_t n, const char* what) {
    if (n > remaining()) throw ParseError(std::string("truncated input while reading ") + what, offset_);
  }

  std::span<const std::uint8_t> data_;
  std::size_t offset_ = 0;
};

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("short write to " + path.string());
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// --- Portable pixmaps (P5 / P6, maxval 255) -------------------------------------

namespace detail {

inline bool pnm_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Skips whitespace and '#' comments, then reads an unsigned decimal.
inline std::uint64_t pnm_number(std::span<const std::uint8_t> data, std::size_t& pos, const char* field) {
  while (pos < data.size()) {
    if (pnm_space(data[pos])) {
      ++pos;
    } else if (data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= data.size()) throw ParseError(std::string("truncated header, missing ") + field, pos);
  if (data[pos] < '0' || data[pos] > '9') throw ParseError(std::string("expected a number for ") + field, pos);
  std::uint64_t v = 0;
  while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') {
    v = v * 10 + (data[pos] - '0');
    if (v > (1u << 30)) throw ParseError(std::string(field) + " is too large", pos);
    ++pos;
  }
  return v;
}

}  // namespace detail

inline Image decode_pnm(std::span<const std::uint8_t> data) {
  if (data.size() < 2 || data[0] != 'P') throw ParseError("not a portable pixmap", 0);
  Index channels = 0;
  if (data[1] == '5') {
    channels = 1;
  } else if (data[1] == '6') {
    channels = 3;
  } else {
    throw ParseError("unsupported magic \"P" + std::string(1, static_cast<char>(data[1])) +
                         "\" (only P5 and P6 are supported)",
                     0);
  }
  std::size_t pos = 2;
  const auto width = detail::pnm_number(data, pos, "width");
  const auto height = detail::pnm_number(data, pos, "height");
  const std::size_t maxval_pos = pos;
  const auto maxval = detail::pnm_number(data, pos, "maxval");
  if (width == 0 || height == 0) throw ParseError("zero image dimension", maxval_pos);
  if (maxval != 255) throw ParseError("unsupported maxval " + std::to_string(maxval) + " (only 255)", maxval_pos);
  if (pos >= data.size() || !detail::pnm_space(data[pos])) throw ParseError("missing whitespace after maxval", pos);
  ++pos;
  const std::uint64_t payload = width * height * static_cast<std::uint64_t>(channels);
  if (data.size() - pos < payload) {
    throw ParseError("truncated payload: need " + std::to_string(payload) + " bytes, have " +
                         std::to_string(data.size() - pos),
                     data.size());
  }
  Image img(static_cast<Index>(height), static_cast<Index>(width), channels);
  for (std::size_t i = 0; i < payload; ++i) img.pixels[i] = data[pos + i] / 255.0;
  return img;
}

inline Bytes encode_pnm(const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw ContractViolation("encode_pnm: only 1 or 3 channels can be written");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) {
    const double scaled = std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
    out.push_back(static_cast<std::uint8_t>(scaled));
  }
  return out;
}

inline Image read_image(const std::filesystem::path& path) { return decode_pnm(read_file(path)); }

inline void write_image(const Image& image, const std::filesystem::path& path) { write_file(path, encode_pnm(image)); }

// --- Tensor blobs ("VQFB") ----------------------------------------------------------
//
// magic "VQFB", rank u64, dims u64[rank], payload f32[prod(dims)], all LE.

struct Tensor {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t elements() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

inline Bytes encode_tensor(const Tensor& t) {
  if (t.elements() != t.data.size()) throw ContractViolation("encode_tensor: dims do not match payload size");
  ByteWriter w;
  w.magic("VQFB");
  w.u64(t.dims.size());
  for (auto d : t.dims) w.u64(d);
  for (float v : t.data) w.u32(std::bit_cast<std::uint32_t>(v));
  return std::move(w).bytes();
}

inline Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("VQFB");
  const auto rank = r.count(r.u64(), 8, "tensor dims");
  Tensor t;
  std::uint64_t n = 1;
  for (std::uint64_t i = 0; i < rank; ++i) {
    const auto d = r.u64();
    if (d != 0 && n > UINT64_MAX / d) throw ParseError("tensor element count overflows", r.offset());
    n *= d;
    t.dims.push_back(d);
  }
  r.count(n, 4, "tensor payload");
  t.data.resize(static_cast<std::size_t>(n));
  for (auto& v : t.data) v = std::bit_cast<float>(r.u32());
  r.expect_end("tensor payload");
  return t;
}

// Images <-> rank-4 tensor [N, H, W, C].
inline Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw InputError("images_to_tensor: no images");
  const Image& f = images.front();
  Tensor t;
  t.dims = {images.size(), static_cast<std::uint64_t>(f.height), static_cast<std::uint64_t>(f.width),
            static_cast<std::uint64_t>(f.channels)};
  t.data.reserve(images.size() * f.pixels.size());
  for (const Image& img : images) {
    if (!img.same_shape(f)) throw InputError("images_to_tensor: images differ in shape");
    for (double v : img.pixels) t.data.push_back(static_cast<float>(v));
  }
  return t;
}

inline std::vector<Image> tensor_to_images(const Tensor& t) {
  if (t.dims.size() != 4) throw InputError("tensor_to_images: expected a rank-4 [N,H,W,C] tensor");
  const auto n = t.dims[0], h = t.dims[1], w = t.dims[2], c = t.dims[3];
  std::vector<Image> out;
  std::size_t at = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    Image img(static_cast<Index>(h), static_cast<Index>(w), static_cast<Index>(c));
    for (auto& v : img.pixels) {
      const double x = t.data[at++];
      if (!(x >= 0.0 && x <= 1.0)) throw InputError("tensor_to_images: pixel outside [0,1] in image " + std::to_string(i));
      v = x;
    }
    out.push_back(std::move(img));
  }
  return out;
}

// --- Synthetic corpora -----------------------------------------------------------

enum class SyntheticKind { kGaussianField, kCheckerboard, kEdges, kMix };

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kMix;
  double param = 0.0;  // correlation length or tile size
};

// "gaussian_field:<len>", "checkerboard:<tile>", "edges" or "mix".
inline SyntheticSpec parse_synthetic(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  double param = 0.0;
  if (colon != std::string::npos) {
    try {
      std::size_t used = 0;
      param = std::stod(text.substr(colon + 1), &used);
      if (used != text.size() - colon - 1) throw std::invalid_argument("junk");
    } catch (const std::exception&) {
      throw ConfigError("bad corpus parameter in '" + text + "'");
    }
  }
  if (name == "gaussian_field") {
    if (!(param > 0.0)) throw ConfigError("gaussian_field needs a positive correlation length, e.g. gaussian_field:4");
    return {SyntheticKind::kGaussianField, param};
  }
  if (name == "checkerboard") {
    if (!(param >= 1.0) || param != std::floor(param)) {
      throw ConfigError("checkerboard needs a positive integer tile size, e.g. checkerboard:8");
    }
    return {SyntheticKind::kCheckerboard, param};
  }
  if (name == "edges" && colon == std::string::npos) return {SyntheticKind::kEdges, 0.0};
  if (name == "mix" && colon == std::string::npos) return {SyntheticKind::kMix, 0.0};
  throw ConfigError("unknown corpus kind '" + text + "' (expected gaussian_field:<len>, checkerboard:<tile>, edges, mix)");
}

namespace detail {

// Periodic Gaussian random field with autocorrelation exp(-lag^2 / len^2):
// white noise blurred by a Gaussian of sigma len/2 (separable, wrap-around).
inline Image gaussian_field(Index size, double len, Rng& rng) {
  const double sigma = len / 2.0;
  const Index radius = std::min<Index>(size / 2, static_cast<Index>(std::ceil(4.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (Index i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
  }
  std::vector<double> noise(static_cast<std::size_t>(size * size));
  for (auto& v : noise) v = rng.normal();
  std::vector<double> tmp(noise.size(), 0.0);
  std::vector<double> field(noise.size(), 0.0);
  const auto wrap = [size](Index i) { return ((i % size) + size) % size; };
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      double acc = 0.0;
      for (Index k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * noise[static_cast<std::size_t>(y * size + wrap(x + k))];
      }
      tmp[static_cast<std::size_t>(y * size + x)] = acc;
    }
  }
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      double acc = 0.0;
      for (Index k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(wrap(y + k) * size + x)];
      }
      field[static_cast<std::size_t>(y * size + x)] = acc;
    }
  }
  double mean = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  Image img(size, size, 1);
  for (std::size_t i = 0; i < field.size(); ++i) {
    img.pixels[i] = std::clamp(0.5 + 0.16 * (field[i] - mean) / sd, 0.0, 1.0);
  }
  return img;
}

inline Image checkerboard(Index size, Index tile, Rng& rng) {
  const auto oy = static_cast<Index>(rng.index(static_cast<std::uint64_t>(tile)));
  const auto ox = static_cast<Index>(rng.index(static_cast<std::uint64_t>(tile)));
  const auto parity = static_cast<Index>(rng.index(2));
  Image img(size, size, 1);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) img.at(y, x) = static_cast<double>(((y + oy) / tile + (x + ox) / tile + parity) % 2);
  }
  return img;
}

// A single straight step edge between two grey levels.
inline Image edges(Index size, Rng& rng) {
  const double angle = 2.0 * M_PI * rng.uniform();
  const double cx = size * (0.25 + 0.5 * rng.uniform());
  const double cy = size * (0.25 + 0.5 * rng.uniform());
  const double a = 0.1 + 0.8 * rng.uniform();
  double b = 0.1 + 0.8 * rng.uniform();
  if (std::abs(a - b) < 0.2) b = a < 0.5 ? a + 0.4 : a - 0.4;
  const double nx = std::cos(angle), ny = std::sin(angle);
  Image img(size, size, 1);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) img.at(y, x) = ((x + 0.5 - cx) * nx + (y + 0.5 - cy) * ny) > 0.0 ? a : b;
  }
  return img;
}

inline Image synthetic_image(const SyntheticSpec& spec, Index size, Rng& rng, std::size_t index) {
  switch (spec.kind) {
    case SyntheticKind::kGaussianField: return gaussian_field(size, spec.param, rng);
    case SyntheticKind::kCheckerboard: return checkerboard(size, static_cast<Index>(spec.param), rng);
    case SyntheticKind::kEdges: return edges(size, rng);
    case SyntheticKind::kMix:
      switch (index % 4) {
        case 0: return gaussian_field(size, 2.0, rng);
        case 1: return gaussian_field(size, 8.0, rng);
        case 2: return checkerboard(size, 8, rng);
        default: return edges(size, rng);
      }
  }
  throw ConfigError("unknown synthetic kind");
}

}  // namespace detail

// Deterministic per (spec, seed, index): image i does not depend on count.
inline std::vector<Image> gen_synthetic(const SyntheticSpec& spec, std::size_t count, std::uint64_t seed,
                                        Index size = 64) {
  if (size < 1) throw ConfigError("gen_synthetic: image size must be positive");
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, "synthetic", i));
    out.push_back(detail::synthetic_image(spec, size, rng, i));
  }
  return out;
}

inline std::vector<Image> gen_synthetic(const std::string& kind, std::size_t count, std::uint64_t seed,
                                        Index size = 64) {
  return gen_synthetic(parse_synthetic(kind), count, seed, size);
}

}  // namespace vqforge
