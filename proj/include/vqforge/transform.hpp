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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vqforge/codebook.hpp"
#include "vqforge/latent.hpp"
#include "vqforge/matrix.hpp"

namespace vqforge {

// Pixels in [0,1], interleaved channels, row-major: (y * width + x) * channels + c.
struct Image {
  Index height = 0;
  Index width = 0;
  Index channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(Index h, Index w, Index c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h * w * c), fill) {}

  double& at(Index y, Index x, Index c = 0) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  double at(Index y, Index x, Index c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }

  bool same_shape(const Image& other) const {
    return height == other.height && width == other.width && channels == other.channels;
  }
};

inline void clamp_unit(Image& image) {
  for (double& v : image.pixels) v = std::clamp(v, 0.0, 1.0);
}

// Cells are flattened p x p x channels patches in (dy, dx, c) order.
inline LatentGrid patchify(const Image& image, Index p) {
  if (p < 1) throw ContractViolation("patchify: patch size must be positive");
  if (image.height % p != 0 || image.width % p != 0) {
    throw InputError("patchify: image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + " is not divisible by patch size " +
                     std::to_string(p) + " (height and width must both be multiples of it)");
  }
  const Index gh = image.height / p;
  const Index gw = image.width / p;
  const Index ch = image.channels;
  LatentGrid grid(gh, gw, p * p * ch);
  for (Index gy = 0; gy < gh; ++gy) {
    for (Index gx = 0; gx < gw; ++gx) {
      auto cell = grid.cell(gy, gx);
      Index i = 0;
      for (Index dy = 0; dy < p; ++dy) {
        for (Index dx = 0; dx < p; ++dx) {
          for (Index c = 0; c < ch; ++c) cell(i++) = image.at(gy * p + dy, gx * p + dx, c);
        }
      }
    }
  }
  return grid;
}

inline Image unpatchify(const LatentGrid& grid, Index p, Index channels) {
  if (grid.dim != p * p * channels) {
    throw ContractViolation("unpatchify: cell dimension " + std::to_string(grid.dim) + " != p*p*channels " +
                            std::to_string(p * p * channels));
  }
  Image image(grid.grid_h * p, grid.grid_w * p, channels);
  for (Index gy = 0; gy < grid.grid_h; ++gy) {
    for (Index gx = 0; gx < grid.grid_w; ++gx) {
      auto cell = grid.cell(gy, gx);
      Index i = 0;
      for (Index dy = 0; dy < p; ++dy) {
        for (Index dx = 0; dx < p; ++dx) {
          for (Index c = 0; c < channels; ++c) image.at(gy * p + dy, gx * p + dx, c) = cell(i++);
        }
      }
    }
  }
  return image;
}

// JPEG zigzag traversal of a p x p frequency block as (row, col) pairs.
inline std::vector<std::pair<Index, Index>> zigzag_order(Index p) {
  std::vector<std::pair<Index, Index>> order;
  order.reserve(static_cast<std::size_t>(p * p));
  for (Index s = 0; s <= 2 * (p - 1); ++s) {
    const Index lo = std::max<Index>(0, s - (p - 1));
    const Index hi = std::min<Index>(s, p - 1);
    if (s % 2 == 0) {
      for (Index u = hi; u >= lo; --u) order.emplace_back(u, s - u);
    } else {
      for (Index u = lo; u <= hi; ++u) order.emplace_back(u, s - u);
    }
  }
  return order;
}

// Orthonormal per-patch 2-D DCT-II. Coefficients come out in zigzag order
// with channels interleaved per frequency, so truncating to the first C
// coefficients keeps the lowest frequencies of every channel.
class BlockTransform {
 public:
  BlockTransform() = default;
  BlockTransform(Index patch_size, Index channels) : patch_size_(patch_size), channels_(channels) {
    if (patch_size < 1 || channels < 1) throw ContractViolation("BlockTransform: bad shape");
    const Index p = patch_size;
    const Index dim = p * p * channels;
    basis_ = Matrix::Zero(dim, dim);
    const auto alpha = [p](Index u) { return u == 0 ? std::sqrt(1.0 / p) : std::sqrt(2.0 / p); };
    const auto order = zigzag_order(p);
    for (std::size_t f = 0; f < order.size(); ++f) {
      const auto [u, v] = order[f];
      for (Index dy = 0; dy < p; ++dy) {
        for (Index dx = 0; dx < p; ++dx) {
          const double w = alpha(u) * alpha(v) * std::cos(M_PI * (2 * dy + 1) * u / (2.0 * p)) *
                           std::cos(M_PI * (2 * dx + 1) * v / (2.0 * p));
          for (Index c = 0; c < channels; ++c) {
            basis_(static_cast<Index>(f) * channels + c, (dy * p + dx) * channels + c) = w;
          }
        }
      }
    }
  }

  Index patch_size() const { return patch_size_; }
  Index channels() const { return channels_; }
  Index dim() const { return basis_.rows(); }

  // Rows are basis functions: coefficients = pixels * basis^T.
  const Matrix& basis() const { return basis_; }

  Matrix forward(const Matrix& cells) const {
    check(cells.cols());
    return cells * basis_.transpose();
  }
  Matrix inverse(const Matrix& coeffs) const {
    check(coeffs.cols());
    return coeffs * basis_;
  }

 private:
  void check(Index cols) const {
    if (cols != dim()) {
      throw ContractViolation("block_transform: cell dimension " + std::to_string(cols) +
                              " != p*p*channels " + std::to_string(dim()));
    }
  }

  Index patch_size_ = 0;
  Index channels_ = 0;
  Matrix basis_;
};

enum class Direction { kForward, kInverse };

inline LatentGrid block_transform(const LatentGrid& grid, const BlockTransform& transform, Direction direction) {
  Matrix out = direction == Direction::kForward ? transform.forward(grid.values) : transform.inverse(grid.values);
  return LatentGrid(grid.grid_h, grid.grid_w, std::move(out));
}

// Per-cell linear map; used for both the projection into code space and back.
inline LatentGrid project(const LatentGrid& grid, const Matrix& map) {
  if (grid.dim != map.rows()) {
    throw ContractViolation("project: cell dimension " + std::to_string(grid.dim) + " != map input " +
                            std::to_string(map.rows()));
  }
  return LatentGrid(grid.grid_h, grid.grid_w, Matrix(grid.values * map));
}

inline LatentGrid unproject(const LatentGrid& grid, const Matrix& map) { return project(grid, map); }

// --- 2x resampling on batches of grids -----------------------------------
//
// Batched matrices hold several grids back to back (image-major, cells
// row-major inside each grid).

inline Matrix downsample2x_rows(const Matrix& fine, Index grid_h, Index grid_w) {
  if (grid_h % 2 != 0 || grid_w % 2 != 0) {
    throw InputError("downsample2x: grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                     " has an odd dimension");
  }
  const Index cells = grid_h * grid_w;
  if (fine.rows() % cells != 0) throw ContractViolation("downsample2x: row count is not a whole number of grids");
  const Index images = fine.rows() / cells;
  const Index ch = grid_h / 2;
  const Index cw = grid_w / 2;
  Matrix coarse(images * ch * cw, fine.cols());
  for (Index img = 0; img < images; ++img) {
    const Index fb = img * cells;
    const Index cb = img * ch * cw;
    for (Index y = 0; y < ch; ++y) {
      for (Index x = 0; x < cw; ++x) {
        const Index f00 = fb + (2 * y) * grid_w + 2 * x;
        coarse.row(cb + y * cw + x) =
            0.25 * (fine.row(f00) + fine.row(f00 + 1) + fine.row(f00 + grid_w) + fine.row(f00 + grid_w + 1));
      }
    }
  }
  return coarse;
}

// Nearest-neighbour duplication; (grid_h, grid_w) is the coarse grid shape.
inline Matrix upsample2x_rows(const Matrix& coarse, Index grid_h, Index grid_w) {
  const Index cells = grid_h * grid_w;
  if (cells == 0 || coarse.rows() % cells != 0) {
    throw ContractViolation("upsample2x: row count is not a whole number of grids");
  }
  const Index images = coarse.rows() / cells;
  const Index fw = 2 * grid_w;
  Matrix fine(images * cells * 4, coarse.cols());
  for (Index img = 0; img < images; ++img) {
    const Index cb = img * cells;
    const Index fb = img * cells * 4;
    for (Index y = 0; y < 2 * grid_h; ++y) {
      for (Index x = 0; x < fw; ++x) fine.row(fb + y * fw + x) = coarse.row(cb + (y / 2) * grid_w + x / 2);
    }
  }
  return fine;
}

// Adjoint of upsample2x_rows: sums each 2x2 block. (grid_h, grid_w) is the
// fine grid shape.
inline Matrix sum_pool2x_rows(const Matrix& fine, Index grid_h, Index grid_w) {
  Matrix pooled = downsample2x_rows(fine, grid_h, grid_w);
  pooled *= 4.0;
  return pooled;
}

inline LatentGrid downsample2x(const LatentGrid& grid) {
  return LatentGrid(grid.grid_h / 2, grid.grid_w / 2, downsample2x_rows(grid.values, grid.grid_h, grid.grid_w));
}

inline LatentGrid upsample2x(const LatentGrid& grid) {
  return LatentGrid(grid.grid_h * 2, grid.grid_w * 2, upsample2x_rows(grid.values, grid.grid_h, grid.grid_w));
}

// --- Linear patch codec ------------------------------------------------------

struct LossBreakdown {
  double reconstruction = 0.0;
  double commitment = 0.0;
  double total = 0.0;
};

// Patch codec: pixels -> DCT -> A (analysis) -> P (projection into code
// space) ... quantize ... Q (unprojection) -> B (synthesis) -> inverse DCT.
struct LinearCodec {
  static constexpr double kDefaultLearningRate = 3e-4;
  static constexpr double kDefaultBeta = 0.25;

  Index patch_size = 8;
  Index channels = 1;
  Matrix analysis;      // (p*p*channels) x C
  Matrix synthesis;     // C x (p*p*channels)
  Matrix projection;    // C x D
  Matrix unprojection;  // D x C
  double learning_rate = kDefaultLearningRate;
  double beta = kDefaultBeta;
  BlockTransform transform;

  LinearCodec() = default;
  LinearCodec(Index p, Index ch, Matrix a, Matrix b, Matrix proj, Matrix unproj, double lr, double commit_beta)
      : patch_size(p),
        channels(ch),
        analysis(std::move(a)),
        synthesis(std::move(b)),
        projection(std::move(proj)),
        unprojection(std::move(unproj)),
        learning_rate(lr),
        beta(commit_beta),
        transform(p, ch) {
    validate();
  }

  // A keeps the first C transform coefficients, B = A^T, and P/Q are
  // identity-shaped, so the untrained codec keeps the C lowest frequencies
  // and quantizes the first D of them.
  static LinearCodec identity_init(Index p, Index ch, Index latent_channels, Index code_dim,
                                   double lr = kDefaultLearningRate, double commit_beta = kDefaultBeta) {
    const Index dim = p * p * ch;
    if (latent_channels < 1 || latent_channels > dim) {
      throw ContractViolation("LinearCodec: latent channels must lie in [1, " + std::to_string(dim) + "]");
    }
    if (code_dim < 1) throw ContractViolation("LinearCodec: code dimension must be positive");
    Matrix a = identity_like(dim, latent_channels);
    Matrix b = a.transpose();
    Matrix proj = identity_like(latent_channels, code_dim);
    Matrix unproj = proj.transpose();
    return LinearCodec(p, ch, std::move(a), std::move(b), std::move(proj), std::move(unproj), lr, commit_beta);
  }

  Index patch_dim() const { return patch_size * patch_size * channels; }
  Index latent_channels() const { return analysis.cols(); }
  Index code_dim() const { return projection.cols(); }

  void validate() const {
    const Index dim = patch_dim();
    const Index c = analysis.cols();
    const Index d = projection.cols();
    require_shape(analysis, dim, c, "LinearCodec analysis");
    require_shape(synthesis, c, dim, "LinearCodec synthesis");
    require_shape(projection, c, d, "LinearCodec projection");
    require_shape(unprojection, d, c, "LinearCodec unprojection");
    if (!(beta >= 0.0)) throw ContractViolation("LinearCodec: beta must be non-negative");
    if (!(learning_rate >= 0.0)) throw ContractViolation("LinearCodec: learning rate must be non-negative");
  }

  // Fused pixel -> code-space map, T^T A P.
  Matrix encoder_matrix() const { return transform.basis().transpose() * analysis * projection; }
  // Fused code-space -> pixel map, Q B T.
  Matrix decoder_matrix() const { return unprojection * synthesis * transform.basis(); }

  Matrix encode(const Matrix& patches) const {
    if (patches.cols() != patch_dim()) throw ContractViolation("LinearCodec::encode: patch dimension mismatch");
    return patches * encoder_matrix();
  }
  Matrix decode(const Matrix& codes) const {
    if (codes.cols() != code_dim()) throw ContractViolation("LinearCodec::decode: code dimension mismatch");
    return codes * decoder_matrix();
  }
};

struct CodecGradients {
  Matrix analysis;
  Matrix synthesis;
  Matrix projection;
  Matrix unprojection;
};

// Loss and straight-through gradients at fixed quantized codes.
//
// Reconstruction uses z_q; the backward pass copies dL/dz_q onto z_e
// unchanged and adds the commitment term 2*beta*(z_e - z_q)/numel. All
// squared errors are means over elements.
inline CodecGradients straight_through_gradients(const LinearCodec& codec, const Matrix& patches,
                                                 const Matrix& z_e, const Matrix& z_q, LossBreakdown* loss) {
  const Index n = patches.rows();
  const Index dim = codec.patch_dim();
  require_shape(patches, n, dim, "straight_through_gradients patches");
  require_shape(z_e, n, codec.code_dim(), "straight_through_gradients z_e");
  require_shape(z_q, n, codec.code_dim(), "straight_through_gradients z_q");
  const Matrix& basis = codec.transform.basis();

  const Matrix synth_basis = codec.synthesis * basis;
  const Matrix decoder = codec.unprojection * synth_basis;
  Matrix residual = z_q * decoder;
  residual -= patches;
  const double recon_norm = static_cast<double>(n * dim);
  const double code_norm = static_cast<double>(n * codec.code_dim());
  const Matrix diff = z_e - z_q;

  if (loss != nullptr) {
    loss->reconstruction = residual.squaredNorm() / recon_norm;
    loss->commitment = codec.beta * diff.squaredNorm() / code_norm;
    loss->total = loss->reconstruction + loss->commitment;
  }

  const Matrix d_recon = (2.0 / recon_norm) * residual;
  const Matrix g = (z_q.transpose() * d_recon) * basis.transpose();
  CodecGradients grads;
  grads.unprojection = g * codec.synthesis.transpose();
  grads.synthesis = codec.unprojection.transpose() * g;

  Matrix d_ze = d_recon * decoder.transpose();
  d_ze += (2.0 * codec.beta / code_norm) * diff;
  const Matrix h = basis * (patches.transpose() * d_ze);
  grads.analysis = h * codec.projection.transpose();
  grads.projection = codec.analysis.transpose() * h;
  return grads;
}

inline void apply_gradients(LinearCodec& codec, const CodecGradients& grads) {
  if (codec.learning_rate == 0.0) return;
  codec.analysis -= codec.learning_rate * grads.analysis;
  codec.synthesis -= codec.learning_rate * grads.synthesis;
  codec.projection -= codec.learning_rate * grads.projection;
  codec.unprojection -= codec.learning_rate * grads.unprojection;
}

struct StepResult {
  LossBreakdown loss;
  AssignmentResult assignment;
  Matrix z_e;
};

inline void check_finite_loss(const LossBreakdown& loss, std::int64_t step) {
  if (!std::isfinite(loss.total)) throw DivergenceError("training diverged (non-finite loss)", step);
}

inline void check_finite_latents(const Matrix& z_e, std::int64_t step) {
  if (first_non_finite_row(z_e) >= 0) throw DivergenceError("training diverged (non-finite encoder output)", step);
}

// One training step on a batch of patches (rows = cells of all images).
// The codec moves by gradient descent, the codebook only by EMA.
inline StepResult straight_through_step(LinearCodec& codec, Codebook& codebook, const Matrix& patches,
                                        std::int64_t step = 0) {
  if (patches.rows() == 0) throw InputError("straight_through_step: empty batch");
  if (codebook.dim() != codec.code_dim()) {
    throw ContractViolation("straight_through_step: codebook dimension " + std::to_string(codebook.dim()) +
                            " != codec code dimension " + std::to_string(codec.code_dim()));
  }
  StepResult result;
  result.z_e = codec.encode(patches);
  check_finite_latents(result.z_e, step);
  result.assignment = nearest_assign(result.z_e, codebook);
  const CodecGradients grads =
      straight_through_gradients(codec, patches, result.z_e, result.assignment.quantized, &result.loss);
  check_finite_loss(result.loss, step);
  apply_gradients(codec, grads);
  ema_update(codebook, result.z_e, result.assignment);
  return result;
}

// Stacks the patch grids of several images into one batch matrix.
inline Matrix patch_batch(std::span<const Image> images, Index p) {
  if (images.empty()) throw InputError("patch_batch: empty batch");
  std::vector<LatentGrid> grids;
  grids.reserve(images.size());
  Index rows = 0;
  for (const Image& img : images) {
    grids.push_back(patchify(img, p));
    if (grids.back().same_shape(grids.front()) == false) throw InputError("patch_batch: images differ in shape");
    rows += grids.back().cells();
  }
  Matrix out(rows, grids.front().dim);
  Index r = 0;
  for (const auto& g : grids) {
    out.middleRows(r, g.cells()) = g.values;
    r += g.cells();
  }
  return out;
}

inline StepResult straight_through_step(LinearCodec& codec, Codebook& codebook, std::span<const Image> batch,
                                        std::int64_t step = 0) {
  return straight_through_step(codec, codebook, patch_batch(batch, codec.patch_size), step);
}

}  // namespace vqforge
