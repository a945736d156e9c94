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
#include <initializer_list>
#include <string>

#include "vqforge/error.hpp"

namespace vqforge {

struct SingleBudget {
  std::int64_t height = 0;  // H_s
  std::int64_t width = 0;   // W_s
  std::int64_t channels = 0;  // C_s
  std::int64_t codes = 0;     // K_s
  std::int64_t code_dim = 0;  // D_s
};

struct HierBudget {
  std::int64_t bottom_height = 0;  // H_b
  std::int64_t bottom_width = 0;   // W_b
  std::int64_t top_height = 0;     // H_t
  std::int64_t top_width = 0;      // W_t
  std::int64_t channels = 0;       // C_h, shared by both levels
  std::int64_t codes = 0;          // K_h per level
  std::int64_t code_dim = 0;       // D_h per level
};

namespace detail {

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b, const char* what) {
  std::int64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw InfeasibleBudget(std::string(what) + ": integer overflow");
  return out;
}

inline std::int64_t product(std::initializer_list<std::int64_t> xs, const char* what) {
  std::int64_t out = 1;
  for (std::int64_t x : xs) out = checked_mul(out, x, what);
  return out;
}

inline void require_positive(std::int64_t v, const char* name) {
  if (v <= 0) throw InfeasibleBudget(std::string(name) + " must be positive, got " + std::to_string(v));
}

}  // namespace detail

// Paired capacity description of a single-level and a two-level model.
//
// Valid only when
//   continuous: H_s*W_s*C_s == H_b*W_b*C_h + H_t*W_t*C_h
//   discrete:   K_s*D_s == 2*K_h*D_h
//   spatial:    H_s*W_s == H_b*W_b
class BudgetSpec {
 public:
  static BudgetSpec make(const SingleBudget& single, const HierBudget& hier) {
    using detail::require_positive;
    require_positive(single.height, "H_s");
    require_positive(single.width, "W_s");
    require_positive(single.channels, "C_s");
    require_positive(single.codes, "K_s");
    require_positive(single.code_dim, "D_s");
    require_positive(hier.bottom_height, "H_b");
    require_positive(hier.bottom_width, "W_b");
    require_positive(hier.top_height, "H_t");
    require_positive(hier.top_width, "W_t");
    require_positive(hier.channels, "C_h");
    require_positive(hier.codes, "K_h");
    require_positive(hier.code_dim, "D_h");

    const auto single_cells = detail::product({single.height, single.width}, "H_s*W_s");
    const auto bottom_cells = detail::product({hier.bottom_height, hier.bottom_width}, "H_b*W_b");
    const auto top_cells = detail::product({hier.top_height, hier.top_width}, "H_t*W_t");
    if (single_cells != bottom_cells) {
      throw InfeasibleBudget("spatial constraint violated: H_s*W_s = " + std::to_string(single_cells) +
                             " but H_b*W_b = " + std::to_string(bottom_cells));
    }
    const auto single_cont = detail::checked_mul(single_cells, single.channels, "H_s*W_s*C_s");
    const auto hier_cont = detail::checked_mul(bottom_cells + top_cells, hier.channels, "(H_b*W_b+H_t*W_t)*C_h");
    if (single_cont != hier_cont) {
      throw InfeasibleBudget("continuous latent budget mismatch: H_s*W_s*C_s = " + std::to_string(single_cont) +
                             " but H_b*W_b*C_h + H_t*W_t*C_h = " + std::to_string(hier_cont));
    }
    const auto single_disc = detail::checked_mul(single.codes, single.code_dim, "K_s*D_s");
    const auto hier_disc = detail::product({2, hier.codes, hier.code_dim}, "2*K_h*D_h");
    if (single_disc != hier_disc) {
      throw InfeasibleBudget("discrete codebook budget mismatch: K_s*D_s = " + std::to_string(single_disc) +
                             " but 2*K_h*D_h = " + std::to_string(hier_disc));
    }
    return BudgetSpec(single, hier);
  }

  const SingleBudget& single() const { return single_; }
  const HierBudget& hier() const { return hier_; }

  std::int64_t continuous_single() const { return single_.height * single_.width * single_.channels; }
  std::int64_t continuous_hier() const {
    return (hier_.bottom_height * hier_.bottom_width + hier_.top_height * hier_.top_width) * hier_.channels;
  }
  std::int64_t discrete_single() const { return single_.codes * single_.code_dim; }
  std::int64_t discrete_hier() const { return 2 * hier_.codes * hier_.code_dim; }

 private:
  BudgetSpec(const SingleBudget& s, const HierBudget& h) : single_(s), hier_(h) {}

  SingleBudget single_;
  HierBudget hier_;
};

// Solves for the single-level model that matches a two-level one:
// C_s = C_h*(H_b*W_b + H_t*W_t)/(H_s*W_s) and K_s = 2*K_h*D_h/D_s.
inline BudgetSpec match_budget(const HierBudget& hier, std::int64_t single_height, std::int64_t single_width,
                               std::int64_t single_code_dim) {
  using detail::require_positive;
  require_positive(hier.bottom_height, "H_b");
  require_positive(hier.bottom_width, "W_b");
  require_positive(hier.top_height, "H_t");
  require_positive(hier.top_width, "W_t");
  require_positive(hier.channels, "C_h");
  require_positive(hier.codes, "K_h");
  require_positive(hier.code_dim, "D_h");
  require_positive(single_height, "H_s");
  require_positive(single_width, "W_s");
  require_positive(single_code_dim, "D_s");
  if (hier.bottom_height != 2 * hier.top_height || hier.bottom_width != 2 * hier.top_width) {
    throw InfeasibleBudget("top grid must be the 2x-downsampled bottom grid: H_b x W_b = " +
                           std::to_string(hier.bottom_height) + "x" + std::to_string(hier.bottom_width) +
                           ", H_t x W_t = " + std::to_string(hier.top_height) + "x" +
                           std::to_string(hier.top_width));
  }
  const auto cells = detail::product({single_height, single_width}, "H_s*W_s");
  const auto cont = detail::checked_mul(
      detail::product({hier.bottom_height, hier.bottom_width}, "H_b*W_b") +
          detail::product({hier.top_height, hier.top_width}, "H_t*W_t"),
      hier.channels, "continuous budget");
  if (cont % cells != 0) {
    throw InfeasibleBudget("C_s = " + std::to_string(cont) + "/" + std::to_string(cells) +
                           " is not an integer (continuous latent budget)");
  }
  const auto disc = detail::product({2, hier.codes, hier.code_dim}, "2*K_h*D_h");
  if (disc % single_code_dim != 0) {
    throw InfeasibleBudget("K_s = " + std::to_string(disc) + "/" + std::to_string(single_code_dim) +
                           " is not an integer (discrete codebook budget K_s*D_s = 2*K_h*D_h)");
  }
  SingleBudget single{single_height, single_width, cont / cells, disc / single_code_dim, single_code_dim};
  return BudgetSpec::make(single, hier);
}

}  // namespace vqforge
