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

#include <cstdint>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "vqforge/codebook.hpp"
#include "vqforge/io.hpp"
#include "vqforge/pipeline.hpp"
#include "vqforge/serialize.hpp"
#include "vqforge/transform.hpp"

// Binary checkpoints. Parameters are held in double precision and stored as
// little-endian f32, so save(load(save(x))) reproduces save(x) byte for byte.
//
//   VQFC  codebook: version, K, D, entries, ema_counts, ema_sums, decay, eps
//   VQFT  codec:    version, kind, p, channels, matrix count, (rows, cols, data)*, lr, beta
//   VQFM  model:    version, manifest JSON, named blobs
namespace vqforge {

inline constexpr std::uint32_t kFormatVersion = 1;

namespace detail {

inline void write_matrix_data(ByteWriter& w, const Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
}

inline Matrix read_matrix_data(ByteReader& r, std::uint64_t rows, std::uint64_t cols, const char* what) {
  if (cols != 0 && rows > UINT64_MAX / cols) throw ParseError(std::string(what) + ": size overflow", r.offset());
  r.count(rows * cols, 4, what);
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
  return m;
}

inline void expect_version(ByteReader& r, const char* what) {
  const std::size_t at = r.offset();
  const std::uint32_t v = r.u32();
  if (v != kFormatVersion) {
    throw ParseError(std::string(what) + ": unsupported format version " + std::to_string(v), at);
  }
}

// Constructor validation failures inside a parser are malformed input.
template <class F>
auto build_parsed(F&& make, const ByteReader& r, const char* what) {
  try {
    return make();
  } catch (const ContractViolation& e) {
    throw ParseError(std::string(what) + ": " + e.what(), r.offset());
  } catch (const InputError& e) {
    if (dynamic_cast<const ParseError*>(&e) != nullptr) throw;
    throw ParseError(std::string(what) + ": " + e.what(), r.offset());
  }
}

}  // namespace detail

// --- Codebook ------------------------------------------------------------------

inline Bytes encode_codebook(const Codebook& cb) {
  ByteWriter w;
  w.magic("VQFC");
  w.u32(kFormatVersion);
  w.u64(static_cast<std::uint64_t>(cb.size()));
  w.u64(static_cast<std::uint64_t>(cb.dim()));
  detail::write_matrix_data(w, cb.entries());
  for (Index k = 0; k < cb.size(); ++k) w.f32(cb.ema_counts()(k));
  detail::write_matrix_data(w, cb.ema_sums());
  w.f32(cb.decay());
  w.f32(cb.smoothing_eps());
  return std::move(w).bytes();
}

inline Codebook decode_codebook(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("VQFC");
  detail::expect_version(r, "codebook");
  const std::uint64_t k = r.u64();
  const std::uint64_t d = r.u64();
  Matrix entries = detail::read_matrix_data(r, k, d, "codebook entries");
  r.count(k, 4, "codebook counts");
  Vector counts(static_cast<Index>(k));
  for (Index i = 0; i < counts.size(); ++i) counts(i) = r.f32();
  Matrix sums = detail::read_matrix_data(r, k, d, "codebook sums");
  const double decay = r.f32();
  const double eps = r.f32();
  r.expect_end("codebook");
  return detail::build_parsed(
      [&] { return Codebook(std::move(entries), std::move(counts), std::move(sums), decay, eps); }, r, "codebook");
}

// --- Codecs --------------------------------------------------------------------

enum class CodecKind : std::uint32_t { kLinear = 0, kHierarchical = 1 };

using AnyCodec = std::variant<LinearCodec, HierCodec>;

namespace detail {

inline Bytes encode_codec_matrices(CodecKind kind, Index p, Index channels, std::initializer_list<const Matrix*> ms,
                                   double lr, double beta) {
  ByteWriter w;
  w.magic("VQFT");
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(static_cast<std::uint64_t>(p));
  w.u64(static_cast<std::uint64_t>(channels));
  w.u64(ms.size());
  for (const Matrix* m : ms) {
    w.u64(static_cast<std::uint64_t>(m->rows()));
    w.u64(static_cast<std::uint64_t>(m->cols()));
    write_matrix_data(w, *m);
  }
  w.f32(lr);
  w.f32(beta);
  return std::move(w).bytes();
}

}  // namespace detail

inline Bytes encode_codec(const LinearCodec& c) {
  return detail::encode_codec_matrices(CodecKind::kLinear, c.patch_size, c.channels,
                                       {&c.analysis, &c.synthesis, &c.projection, &c.unprojection}, c.learning_rate,
                                       c.beta);
}

inline Bytes encode_codec(const HierCodec& c) {
  return detail::encode_codec_matrices(
      CodecKind::kHierarchical, c.patch_size, c.channels,
      {&c.analysis, &c.bottom_projection, &c.top_encoder, &c.top_projection, &c.fusion, &c.synthesis},
      c.learning_rate, c.beta);
}

inline AnyCodec decode_codec(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("VQFT");
  detail::expect_version(r, "codec");
  const std::size_t kind_at = r.offset();
  const std::uint32_t kind = r.u32();
  if (kind > 1) throw ParseError("codec: unknown codec kind " + std::to_string(kind), kind_at);
  const std::uint64_t p = r.u64();
  const std::uint64_t channels = r.u64();
  if (p < 1 || p > 4096 || channels < 1 || channels > 4096) {
    throw ParseError("codec: implausible patch size or channel count", r.offset());
  }
  const std::size_t count_at = r.offset();
  const std::uint64_t count = r.u64();
  const std::uint64_t expected = kind == 0 ? 4 : 6;
  if (count != expected) {
    throw ParseError("codec: expected " + std::to_string(expected) + " matrices, found " + std::to_string(count),
                     count_at);
  }
  std::vector<Matrix> ms;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    ms.push_back(detail::read_matrix_data(r, rows, cols, "codec matrix"));
  }
  const double lr = r.f32();
  const double beta = r.f32();
  r.expect_end("codec");
  const auto pi = static_cast<Index>(p);
  const auto ci = static_cast<Index>(channels);
  if (kind == 0) {
    return detail::build_parsed(
        [&] { return AnyCodec(LinearCodec(pi, ci, ms[0], ms[1], ms[2], ms[3], lr, beta)); }, r, "codec");
  }
  return detail::build_parsed(
      [&] { return AnyCodec(HierCodec(pi, ci, ms[0], ms[1], ms[2], ms[3], ms[4], ms[5], lr, beta)); }, r, "codec");
}

// --- Model container -------------------------------------------------------------

struct Container {
  std::string manifest;  // JSON text
  std::vector<std::pair<std::string, Bytes>> blobs;

  const Bytes& blob(const std::string& name) const {
    for (const auto& [n, b] : blobs) {
      if (n == name) return b;
    }
    throw InputError("model file has no '" + name + "' blob");
  }
};

inline Bytes encode_container(const Container& c) {
  ByteWriter w;
  w.magic("VQFM");
  w.u32(kFormatVersion);
  w.str(c.manifest);
  w.u64(c.blobs.size());
  for (const auto& [name, bytes] : c.blobs) {
    w.str(name);
    w.u64(bytes.size());
    w.raw(bytes);
  }
  return std::move(w).bytes();
}

inline Container decode_container(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("VQFM");
  detail::expect_version(r, "model");
  Container c;
  c.manifest = r.str();
  const std::uint64_t n = r.count(r.u64(), 16, "model blobs");
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = r.str();
    const std::uint64_t size = r.u64();
    const auto data = r.raw(size);
    c.blobs.emplace_back(std::move(name), Bytes(data.begin(), data.end()));
  }
  r.expect_end("model");
  return c;
}

using AnyModel = std::variant<SingleLevelModel, HierarchicalModel>;

struct ModelFile {
  Json manifest;
  AnyModel model;
};

inline Bytes encode_model(const SingleLevelModel& m, const Json& manifest) {
  Container c;
  c.manifest = manifest.dump(2);
  c.blobs.emplace_back("codec", encode_codec(m.codec));
  c.blobs.emplace_back("codebook", encode_codebook(m.codebook));
  return encode_container(c);
}

inline Bytes encode_model(const HierarchicalModel& m, const Json& manifest) {
  Container c;
  c.manifest = manifest.dump(2);
  c.blobs.emplace_back("codec", encode_codec(m.codec));
  c.blobs.emplace_back("codebook.bottom", encode_codebook(m.bottom));
  c.blobs.emplace_back("codebook.top", encode_codebook(m.top));
  return encode_container(c);
}

// Usage windows start empty; reset and window settings come from the
// manifest's "options" when present.
inline ModelFile decode_model(std::span<const std::uint8_t> bytes) {
  const Container c = decode_container(bytes);
  Json manifest;
  try {
    manifest = Json::parse(c.manifest);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model manifest is not valid JSON: ") + e.what(), 0);
  }
  ModelOptions opt;
  if (manifest.is_object() && manifest.contains("options")) opt = model_options_from_json(manifest.at("options"));
  AnyCodec codec = decode_codec(c.blob("codec"));
  if (auto* linear = std::get_if<LinearCodec>(&codec)) {
    Codebook cb = decode_codebook(c.blob("codebook"));
    if (cb.dim() != linear->code_dim()) throw ParseError("model: codebook and codec dimensions differ", 0);
    UsageWindow usage(cb.size(), opt.window, opt.threshold);
    return ModelFile{std::move(manifest),
                     SingleLevelModel{std::move(*linear), std::move(cb), std::move(usage), opt.reset}};
  }
  auto& hier = std::get<HierCodec>(codec);
  Codebook bottom = decode_codebook(c.blob("codebook.bottom"));
  Codebook top = decode_codebook(c.blob("codebook.top"));
  if (bottom.dim() != hier.code_dim() || top.dim() != hier.code_dim()) {
    throw ParseError("model: codebook and codec dimensions differ", 0);
  }
  UsageWindow bu(bottom.size(), opt.window, opt.threshold);
  UsageWindow tu(top.size(), opt.window, opt.threshold);
  return ModelFile{std::move(manifest), HierarchicalModel{std::move(hier), std::move(bottom), std::move(top),
                                                          std::move(bu), std::move(tu), opt.reset}};
}

}  // namespace vqforge
