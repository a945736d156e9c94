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

#include <string>

#include "vqforge/matrix.hpp"

namespace vqforge {

// An H x W grid of dim-dimensional vectors, one row of `values` per cell in
// row-major cell order.
struct LatentGrid {
  Index grid_h = 0;
  Index grid_w = 0;
  Index dim = 0;
  Matrix values;

  LatentGrid() = default;
  LatentGrid(Index h, Index w, Index d) : grid_h(h), grid_w(w), dim(d), values(Matrix::Zero(h * w, d)) {}
  LatentGrid(Index h, Index w, Matrix v) : grid_h(h), grid_w(w), dim(v.cols()), values(std::move(v)) {
    if (values.rows() != h * w) {
      throw ContractViolation("LatentGrid: " + std::to_string(values.rows()) + " rows for a " +
                              std::to_string(h) + "x" + std::to_string(w) + " grid");
    }
  }

  Index cells() const { return grid_h * grid_w; }
  auto cell(Index y, Index x) { return values.row(y * grid_w + x); }
  auto cell(Index y, Index x) const { return values.row(y * grid_w + x); }

  bool same_shape(const LatentGrid& other) const {
    return grid_h == other.grid_h && grid_w == other.grid_w && dim == other.dim;
  }
};

}  // namespace vqforge
