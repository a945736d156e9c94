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
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "vqforge/error.hpp"
#include "vqforge/transform.hpp"

namespace vqforge {

// Empirical code-assignment distribution over K codes.
struct UsageStats {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  UsageStats() = default;
  explicit UsageStats(std::vector<std::int64_t> c) : counts(std::move(c)) {
    for (std::int64_t v : counts) {
      if (v < 0) throw InputError("UsageStats: negative count");
      total += v;
    }
  }

  std::size_t codes() const { return counts.size(); }
};

namespace detail {

inline void require_mass(const UsageStats& stats, const char* what) {
  if (stats.counts.empty() || stats.total < 1) {
    throw InputError(std::string(what) + ": usage statistics hold no assignments");
  }
}

}  // namespace detail

// exp of the Shannon entropy (nats) of counts/total, with 0 ln 0 = 0.
inline double perplexity(const UsageStats& stats) {
  detail::require_mass(stats, "perplexity");
  const double total = static_cast<double>(stats.total);
  double entropy = 0.0;
  for (std::int64_t c : stats.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

inline double normalized_perplexity(const UsageStats& stats) {
  return perplexity(stats) / static_cast<double>(stats.codes());
}

struct LorenzCurve {
  // (cumulative code fraction, cumulative assignment share), K+1 points from
  // (0,0) to (1,1), codes sorted by ascending frequency.
  std::vector<std::pair<double, double>> points;
};

inline LorenzCurve lorenz(const UsageStats& stats) {
  detail::require_mass(stats, "lorenz");
  std::vector<std::int64_t> sorted = stats.counts;
  std::sort(sorted.begin(), sorted.end());
  const double k = static_cast<double>(sorted.size());
  const double total = static_cast<double>(stats.total);
  LorenzCurve curve;
  curve.points.reserve(sorted.size() + 1);
  curve.points.emplace_back(0.0, 0.0);
  std::int64_t running = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    running += sorted[i];
    curve.points.emplace_back(static_cast<double>(i + 1) / k, static_cast<double>(running) / total);
  }
  // Integer running sums make the last share exactly total/total; pin x too.
  curve.points.back() = {1.0, 1.0};
  return curve;
}

// 1 - 2 * (trapezoid area under the Lorenz curve).
inline double gini(const UsageStats& stats) {
  const LorenzCurve curve = lorenz(stats);
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto [x0, y0] = curve.points[i - 1];
    const auto [x1, y1] = curve.points[i];
    area += (x1 - x0) * (y0 + y1) * 0.5;
  }
  return std::clamp(1.0 - 2.0 * area, 0.0, 1.0);
}

inline double mse(const Image& x, const Image& y) {
  if (!x.same_shape(y)) throw ContractViolation("mse: image shapes differ");
  if (x.pixels.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < x.pixels.size(); ++i) {
    const double d = x.pixels[i] - y.pixels[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.pixels.size());
}

// PSNR with peak 1.0. A zero MSE is reported as `exact` rather than a number.
struct Psnr {
  double db = std::numeric_limits<double>::infinity();
  bool exact = true;

  static Psnr from_mse(double mse_value) {
    if (mse_value < 0.0 || std::isnan(mse_value)) throw InputError("psnr: invalid mse");
    if (mse_value == 0.0) return Psnr{};
    return Psnr{10.0 * std::log10(1.0 / mse_value), false};
  }

  std::string str() const;
};

inline std::string Psnr::str() const {
  if (exact) return "exact";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", db);
  return buf;
}

inline Psnr psnr(const Image& x, const Image& y) { return Psnr::from_mse(mse(x, y)); }

}  // namespace vqforge
