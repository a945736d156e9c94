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
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vqforge/budget.hpp"
#include "vqforge/codebook.hpp"
#include "vqforge/metrics.hpp"
#include "vqforge/rng.hpp"
#include "vqforge/transform.hpp"

namespace vqforge {

// --- Two-level codec -----------------------------------------------------------
//
// bottom: pixels -> DCT -> A -> P_b                      (H_b x W_b x D)
// top:    2x2 average of the bottom latent -> E -> P_t   (H_t x W_t x D)
// decode: concat(z_q_b, upsample(z_q_t)) -> F -> B -> inverse DCT
//
// Average pooling commutes with the per-cell maps, so the top path is
// evaluated as pool(pixels) * (T^T A E P_t).
struct HierCodec {
  Index patch_size = 8;
  Index channels = 1;
  Matrix analysis;           // (p*p*channels) x C
  Matrix bottom_projection;  // C x D
  Matrix top_encoder;        // C x C
  Matrix top_projection;     // C x D
  Matrix fusion;             // 2D x C; first D rows read the bottom codes
  Matrix synthesis;          // C x (p*p*channels)
  double learning_rate = LinearCodec::kDefaultLearningRate;
  double beta = LinearCodec::kDefaultBeta;
  BlockTransform transform;

  HierCodec() = default;
  HierCodec(Index p, Index ch, Matrix a, Matrix pb, Matrix e, Matrix pt, Matrix f, Matrix b, double lr,
            double commit_beta)
      : patch_size(p),
        channels(ch),
        analysis(std::move(a)),
        bottom_projection(std::move(pb)),
        top_encoder(std::move(e)),
        top_projection(std::move(pt)),
        fusion(std::move(f)),
        synthesis(std::move(b)),
        learning_rate(lr),
        beta(commit_beta),
        transform(p, ch) {
    validate();
  }

  // Same starting point as LinearCodec::identity_init for the bottom path.
  // The top branch of the fusion map starts at zero and is learned.
  static HierCodec identity_init(Index p, Index ch, Index latent_channels, Index code_dim,
                                 double lr = LinearCodec::kDefaultLearningRate,
                                 double commit_beta = LinearCodec::kDefaultBeta) {
    const Index dim = p * p * ch;
    if (latent_channels < 1 || latent_channels > dim) {
      throw ContractViolation("HierCodec: latent channels must lie in [1, " + std::to_string(dim) + "]");
    }
    if (code_dim < 1) throw ContractViolation("HierCodec: code dimension must be positive");
    Matrix a = identity_like(dim, latent_channels);
    Matrix b = a.transpose();
    Matrix pb = identity_like(latent_channels, code_dim);
    Matrix e = Matrix::Identity(latent_channels, latent_channels);
    Matrix pt = pb;
    Matrix f = Matrix::Zero(2 * code_dim, latent_channels);
    f.topRows(code_dim) = pb.transpose();
    return HierCodec(p, ch, std::move(a), std::move(pb), std::move(e), std::move(pt), std::move(f), std::move(b),
                     lr, commit_beta);
  }

  Index patch_dim() const { return patch_size * patch_size * channels; }
  Index latent_channels() const { return analysis.cols(); }
  Index code_dim() const { return bottom_projection.cols(); }

  void validate() const {
    const Index dim = patch_dim();
    const Index c = analysis.cols();
    const Index d = bottom_projection.cols();
    require_shape(analysis, dim, c, "HierCodec analysis");
    require_shape(bottom_projection, c, d, "HierCodec bottom projection");
    require_shape(top_encoder, c, c, "HierCodec top encoder");
    require_shape(top_projection, c, d, "HierCodec top projection");
    require_shape(fusion, 2 * d, c, "HierCodec fusion");
    require_shape(synthesis, c, dim, "HierCodec synthesis");
    if (!(beta >= 0.0)) throw ContractViolation("HierCodec: beta must be non-negative");
    if (!(learning_rate >= 0.0)) throw ContractViolation("HierCodec: learning rate must be non-negative");
  }

  Matrix bottom_encoder_matrix() const { return transform.basis().transpose() * analysis * bottom_projection; }
  Matrix top_encoder_matrix() const {
    return transform.basis().transpose() * analysis * top_encoder * top_projection;
  }
  Matrix bottom_decoder_matrix() const { return fusion.topRows(code_dim()) * synthesis * transform.basis(); }
  Matrix top_decoder_matrix() const { return fusion.bottomRows(code_dim()) * synthesis * transform.basis(); }

  // Patches -> (bottom z_e, top z_e) for a batch of (grid_h x grid_w) grids.
  std::pair<Matrix, Matrix> encode(const Matrix& patches, Index grid_h, Index grid_w) const {
    if (patches.cols() != patch_dim()) throw ContractViolation("HierCodec::encode: patch dimension mismatch");
    Matrix bottom = patches * bottom_encoder_matrix();
    Matrix top = downsample2x_rows(patches, grid_h, grid_w) * top_encoder_matrix();
    return {std::move(bottom), std::move(top)};
  }

  Matrix decode(const Matrix& bottom_codes, const Matrix& top_codes, Index grid_h, Index grid_w) const {
    Matrix out = bottom_codes * bottom_decoder_matrix();
    out += upsample2x_rows(top_codes * top_decoder_matrix(), grid_h / 2, grid_w / 2);
    return out;
  }
};

struct HierGradients {
  Matrix analysis;
  Matrix bottom_projection;
  Matrix top_encoder;
  Matrix top_projection;
  Matrix fusion;
  Matrix synthesis;
};

struct HierLoss {
  LossBreakdown total;  // commitment = bottom + top
  double commitment_bottom = 0.0;
  double commitment_top = 0.0;
};

// Straight-through gradients of the summed two-level objective at fixed codes.
inline HierGradients hier_straight_through_gradients(const HierCodec& codec, const Matrix& patches, Index grid_h,
                                                     Index grid_w, const Matrix& ze_b, const Matrix& zq_b,
                                                     const Matrix& ze_t, const Matrix& zq_t, HierLoss* loss) {
  const Index n = patches.rows();
  const Index dim = codec.patch_dim();
  const Index d = codec.code_dim();
  const Index nt = ze_t.rows();
  require_shape(ze_b, n, d, "hier gradients bottom z_e");
  require_shape(zq_b, n, d, "hier gradients bottom z_q");
  require_shape(zq_t, nt, d, "hier gradients top z_q");
  if (nt * 4 != n) throw ContractViolation("hier gradients: top grid must be the 2x-downsampled bottom grid");

  const Matrix& basis = codec.transform.basis();
  const Matrix synth_basis = codec.synthesis * basis;
  const auto fuse_b = codec.fusion.topRows(d);
  const auto fuse_t = codec.fusion.bottomRows(d);
  const Matrix dec_b = fuse_b * synth_basis;
  const Matrix dec_t = fuse_t * synth_basis;

  Matrix residual = zq_b * dec_b;
  residual += upsample2x_rows(zq_t * dec_t, grid_h / 2, grid_w / 2);
  residual -= patches;

  const double recon_norm = static_cast<double>(n * dim);
  const double norm_b = static_cast<double>(n * d);
  const double norm_t = static_cast<double>(nt * d);
  const Matrix diff_b = ze_b - zq_b;
  const Matrix diff_t = ze_t - zq_t;
  if (loss != nullptr) {
    loss->total.reconstruction = residual.squaredNorm() / recon_norm;
    loss->commitment_bottom = codec.beta * diff_b.squaredNorm() / norm_b;
    loss->commitment_top = codec.beta * diff_t.squaredNorm() / norm_t;
    loss->total.commitment = loss->commitment_bottom + loss->commitment_top;
    loss->total.total = loss->total.reconstruction + loss->total.commitment;
  }

  const Matrix d_recon = (2.0 / recon_norm) * residual;
  const Matrix d_recon_top = sum_pool2x_rows(d_recon, grid_h, grid_w);
  const Matrix d_dec_b = zq_b.transpose() * d_recon;
  const Matrix d_dec_t = zq_t.transpose() * d_recon_top;

  HierGradients g;
  g.fusion.resize(2 * d, codec.latent_channels());
  g.fusion.topRows(d) = d_dec_b * synth_basis.transpose();
  g.fusion.bottomRows(d) = d_dec_t * synth_basis.transpose();
  g.synthesis = (fuse_b.transpose() * d_dec_b + fuse_t.transpose() * d_dec_t) * basis.transpose();

  Matrix d_ze_b = d_recon * dec_b.transpose();
  d_ze_b += (2.0 * codec.beta / norm_b) * diff_b;
  Matrix d_ze_t = d_recon_top * dec_t.transpose();
  d_ze_t += (2.0 * codec.beta / norm_t) * diff_t;

  const Matrix pooled = downsample2x_rows(patches, grid_h, grid_w);
  const Matrix h_b = basis * (patches.transpose() * d_ze_b);
  const Matrix h_t = basis * (pooled.transpose() * d_ze_t);
  const Matrix top_map = codec.top_encoder * codec.top_projection;
  g.analysis = h_b * codec.bottom_projection.transpose() + h_t * top_map.transpose();
  g.bottom_projection = codec.analysis.transpose() * h_b;
  const Matrix a_h_t = codec.analysis.transpose() * h_t;
  g.top_projection = codec.top_encoder.transpose() * a_h_t;
  g.top_encoder = a_h_t * codec.top_projection.transpose();
  return g;
}

inline void apply_gradients(HierCodec& codec, const HierGradients& g) {
  const double lr = codec.learning_rate;
  if (lr == 0.0) return;
  codec.analysis -= lr * g.analysis;
  codec.bottom_projection -= lr * g.bottom_projection;
  codec.top_encoder -= lr * g.top_encoder;
  codec.top_projection -= lr * g.top_projection;
  codec.fusion -= lr * g.fusion;
  codec.synthesis -= lr * g.synthesis;
}

struct HierStepResult {
  HierLoss loss;
  AssignmentResult bottom;
  AssignmentResult top;
  Matrix ze_bottom;
  Matrix ze_top;
};

inline HierStepResult hier_straight_through_step(HierCodec& codec, Codebook& bottom, Codebook& top,
                                                 const Matrix& patches, Index grid_h, Index grid_w,
                                                 std::int64_t step = 0) {
  if (patches.rows() == 0) throw InputError("hier_straight_through_step: empty batch");
  if (bottom.dim() != codec.code_dim() || top.dim() != codec.code_dim()) {
    throw ContractViolation("hier_straight_through_step: codebook dimension != codec code dimension");
  }
  HierStepResult r;
  std::tie(r.ze_bottom, r.ze_top) = codec.encode(patches, grid_h, grid_w);
  check_finite_latents(r.ze_bottom, step);
  check_finite_latents(r.ze_top, step);
  r.bottom = nearest_assign(r.ze_bottom, bottom);
  r.top = nearest_assign(r.ze_top, top);
  const HierGradients g = hier_straight_through_gradients(codec, patches, grid_h, grid_w, r.ze_bottom,
                                                          r.bottom.quantized, r.ze_top, r.top.quantized, &r.loss);
  check_finite_loss(r.loss.total, step);
  apply_gradients(codec, g);
  ema_update(bottom, r.ze_bottom, r.bottom);
  ema_update(top, r.ze_top, r.top);
  return r;
}

// --- Corpus as patch rows ----------------------------------------------------

// All images of a corpus patchified once; image i owns rows
// [i*cells, (i+1)*cells).
struct PatchCorpus {
  Index patch_size = 0;
  Index channels = 0;
  Index grid_h = 0;
  Index grid_w = 0;
  Matrix patches;

  static PatchCorpus from_images(std::span<const Image> images, Index p) {
    if (images.empty()) throw InputError("PatchCorpus: corpus is empty");
    PatchCorpus c;
    c.patch_size = p;
    c.channels = images.front().channels;
    const LatentGrid first = patchify(images.front(), p);
    c.grid_h = first.grid_h;
    c.grid_w = first.grid_w;
    c.patches = patch_batch(images, p);
    return c;
  }

  Index cells_per_image() const { return grid_h * grid_w; }
  Index images() const { return cells_per_image() == 0 ? 0 : patches.rows() / cells_per_image(); }

  Matrix gather(std::span<const Index> ids) const {
    const Index cells = cells_per_image();
    Matrix out(static_cast<Index>(ids.size()) * cells, patches.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.middleRows(static_cast<Index>(i) * cells, cells) = patches.middleRows(ids[i] * cells, cells);
    }
    return out;
  }
};

// Epoch-shuffled image ids.
class BatchSampler {
 public:
  BatchSampler(Index images, std::uint64_t seed) : rng_(seed), order_(static_cast<std::size_t>(images)) {
    if (images < 1) throw InputError("BatchSampler: corpus is empty");
    reshuffle();
  }

  std::vector<Index> next(Index batch) {
    std::vector<Index> ids;
    ids.reserve(static_cast<std::size_t>(batch));
    while (static_cast<Index>(ids.size()) < batch) {
      if (cursor_ == order_.size()) reshuffle();
      ids.push_back(order_[cursor_++]);
    }
    return ids;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), Index{0});
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng_.index(i)]);
    }
    cursor_ = 0;
  }

  Rng rng_;
  std::vector<Index> order_;
  std::size_t cursor_ = 0;
};

// --- Models --------------------------------------------------------------------

enum class InitMode {
  kFromData,   // entries drawn from encoder outputs on random training images
  kRandom,     // uniform in [-1/K, 1/K]
  kCollapsed,  // every entry at the mean encoder output (adversarial)
};

inline std::string to_string(InitMode mode) {
  switch (mode) {
    case InitMode::kFromData: return "data";
    case InitMode::kRandom: return "random";
    case InitMode::kCollapsed: return "collapsed";
  }
  return "?";
}

inline InitMode init_mode_from_string(const std::string& s) {
  if (s == "data") return InitMode::kFromData;
  if (s == "random") return InitMode::kRandom;
  if (s == "collapsed") return InitMode::kCollapsed;
  throw ConfigError("unknown codebook init mode '" + s + "' (expected data, random or collapsed)");
}

struct ModelOptions {
  Index patch_size = 8;
  Index channels = 1;
  double learning_rate = LinearCodec::kDefaultLearningRate;
  double beta = LinearCodec::kDefaultBeta;
  double decay = Codebook::kDefaultDecay;
  double smoothing_eps = Codebook::kDefaultSmoothingEps;
  std::size_t window = UsageWindow::kDefaultWindow;
  std::int64_t threshold = UsageWindow::kDefaultThreshold;
  ResetOptions reset;
  double init_jitter = 0.01;
  Index init_images = 64;
};

struct SingleLevelModel {
  LinearCodec codec;
  Codebook codebook;
  UsageWindow usage;
  ResetOptions reset;
};

struct HierarchicalModel {
  HierCodec codec;
  Codebook bottom;
  Codebook top;
  UsageWindow bottom_usage;
  UsageWindow top_usage;
  ResetOptions reset;
};

namespace detail {

inline std::vector<Index> pick_images(Index available, Index wanted, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Index> order(static_cast<std::size_t>(available));
  std::iota(order.begin(), order.end(), Index{0});
  const Index take = std::min(available, wanted);
  for (Index i = 0; i < take; ++i) {
    const auto j = i + static_cast<Index>(rng.index(static_cast<std::uint64_t>(available - i)));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  order.resize(static_cast<std::size_t>(take));
  return order;
}

inline Codebook make_codebook(const Matrix& samples, Index k, InitMode mode, std::uint64_t seed,
                              const ModelOptions& opt) {
  switch (mode) {
    case InitMode::kFromData:
      return init_from_samples(samples, k, seed, InitOptions{opt.decay, opt.smoothing_eps, opt.init_jitter});
    case InitMode::kCollapsed: {
      const Eigen::RowVectorXd mean = samples.colwise().mean();
      Matrix entries = mean.replicate(k, 1);
      return Codebook(std::move(entries), opt.decay, opt.smoothing_eps);
    }
    case InitMode::kRandom: {
      Rng rng(seed);
      Matrix entries(k, samples.cols());
      const double scale = 1.0 / static_cast<double>(k);
      for (Index i = 0; i < entries.size(); ++i) entries.data()[i] = scale * (2.0 * rng.uniform() - 1.0);
      return Codebook(std::move(entries), opt.decay, opt.smoothing_eps);
    }
  }
  throw ConfigError("make_codebook: unknown init mode");
}

inline void check_corpus(const PatchCorpus& corpus, const ModelOptions& opt) {
  if (corpus.images() < 1) throw InputError("corpus is empty");
  if (corpus.patch_size != opt.patch_size || corpus.channels != opt.channels) {
    throw ContractViolation("corpus patch size/channels do not match the model options");
  }
}

}  // namespace detail

inline SingleLevelModel build_single_model(const SingleBudget& budget, const ModelOptions& opt,
                                           const PatchCorpus& corpus, InitMode init, std::uint64_t seed) {
  detail::check_corpus(corpus, opt);
  if (corpus.grid_h != budget.height || corpus.grid_w != budget.width) {
    throw ContractViolation("single-level budget grid " + std::to_string(budget.height) + "x" +
                            std::to_string(budget.width) + " does not match the corpus latent grid " +
                            std::to_string(corpus.grid_h) + "x" + std::to_string(corpus.grid_w));
  }
  LinearCodec codec =
      LinearCodec::identity_init(opt.patch_size, opt.channels, budget.channels, budget.code_dim, opt.learning_rate,
                                 opt.beta);
  const auto ids = detail::pick_images(corpus.images(), opt.init_images, derive_seed(seed, "init/images"));
  const Matrix samples = codec.encode(corpus.gather(ids));
  Codebook codebook = detail::make_codebook(samples, budget.codes, init, derive_seed(seed, "init/codes"), opt);
  UsageWindow usage(budget.codes, opt.window, opt.threshold);
  return SingleLevelModel{std::move(codec), std::move(codebook), std::move(usage), opt.reset};
}

inline HierarchicalModel build_hier_model(const HierBudget& budget, const ModelOptions& opt,
                                          const PatchCorpus& corpus, InitMode init, std::uint64_t seed) {
  detail::check_corpus(corpus, opt);
  if (corpus.grid_h != budget.bottom_height || corpus.grid_w != budget.bottom_width ||
      budget.bottom_height != 2 * budget.top_height || budget.bottom_width != 2 * budget.top_width) {
    throw ContractViolation("hierarchical budget grids (" + std::to_string(budget.bottom_height) + "x" +
                            std::to_string(budget.bottom_width) + ", " + std::to_string(budget.top_height) + "x" +
                            std::to_string(budget.top_width) + ") do not match the corpus latent grid " +
                            std::to_string(corpus.grid_h) + "x" + std::to_string(corpus.grid_w) +
                            " and its 2x-downsampled top grid");
  }
  HierCodec codec = HierCodec::identity_init(opt.patch_size, opt.channels, budget.channels, budget.code_dim,
                                             opt.learning_rate, opt.beta);
  const auto ids = detail::pick_images(corpus.images(), opt.init_images, derive_seed(seed, "init/images"));
  const auto [ze_b, ze_t] = codec.encode(corpus.gather(ids), corpus.grid_h, corpus.grid_w);
  Codebook bottom = detail::make_codebook(ze_b, budget.codes, init, derive_seed(seed, "init/codes"), opt);
  Codebook top = detail::make_codebook(ze_t, budget.codes, init, derive_seed(seed, "init/codes/top"), opt);
  UsageWindow bottom_usage(budget.codes, opt.window, opt.threshold);
  UsageWindow top_usage(budget.codes, opt.window, opt.threshold);
  return HierarchicalModel{std::move(codec), std::move(bottom), std::move(top), std::move(bottom_usage),
                           std::move(top_usage), opt.reset};
}

// --- Forward passes on single images -------------------------------------------

struct SingleForwardResult {
  Image reconstruction;
  LatentGrid z_e;
  AssignmentResult assignment;
};

inline SingleForwardResult single_forward(const SingleLevelModel& model, const Image& image) {
  const LinearCodec& codec = model.codec;
  if (image.channels != codec.channels) throw ContractViolation("single_forward: channel count mismatch");
  if (codec.code_dim() != model.codebook.dim()) {
    throw ContractViolation("single_forward: codec projection output != codebook dimension");
  }
  const LatentGrid coeffs = block_transform(patchify(image, codec.patch_size), codec.transform, Direction::kForward);
  SingleForwardResult out;
  out.z_e = project(project(coeffs, codec.analysis), codec.projection);
  out.assignment = nearest_assign(out.z_e.values, model.codebook);
  const LatentGrid z_q(out.z_e.grid_h, out.z_e.grid_w, out.assignment.quantized);
  const LatentGrid recon_coeffs = project(unproject(z_q, codec.unprojection), codec.synthesis);
  out.reconstruction =
      unpatchify(block_transform(recon_coeffs, codec.transform, Direction::kInverse), codec.patch_size,
                 codec.channels);
  clamp_unit(out.reconstruction);
  return out;
}

struct HierForwardResult {
  Image reconstruction;
  LatentGrid ze_bottom;
  LatentGrid ze_top;
  AssignmentResult bottom;
  AssignmentResult top;
  LatentGrid fused;  // concat(z_q_b, upsample(z_q_t)), 2D channels at bottom resolution
};

struct HierForwardOptions {
  bool zero_top = false;  // ablation probe: decode with the top codes replaced by zeros
};

inline HierForwardResult hier_forward(const HierarchicalModel& model, const Image& image,
                                      const HierForwardOptions& options = {}) {
  const HierCodec& codec = model.codec;
  if (image.channels != codec.channels) throw ContractViolation("hier_forward: channel count mismatch");
  const Index d = codec.code_dim();
  if (model.bottom.dim() != d || model.top.dim() != d) {
    throw ContractViolation("hier_forward: codec projection output != codebook dimension");
  }
  const LatentGrid coeffs = block_transform(patchify(image, codec.patch_size), codec.transform, Direction::kForward);
  const LatentGrid zo_b = project(coeffs, codec.analysis);
  HierForwardResult out;
  out.ze_bottom = project(zo_b, codec.bottom_projection);
  out.ze_top = project(project(downsample2x(zo_b), codec.top_encoder), codec.top_projection);
  out.bottom = nearest_assign(out.ze_bottom.values, model.bottom);
  out.top = nearest_assign(out.ze_top.values, model.top);

  LatentGrid zq_t(out.ze_top.grid_h, out.ze_top.grid_w, out.top.quantized);
  if (options.zero_top) zq_t.values.setZero();
  const LatentGrid up = upsample2x(zq_t);
  out.fused = LatentGrid(zo_b.grid_h, zo_b.grid_w, 2 * d);
  out.fused.values.leftCols(d) = out.bottom.quantized;
  out.fused.values.rightCols(d) = up.values;

  const LatentGrid recon_coeffs = project(project(out.fused, codec.fusion), codec.synthesis);
  out.reconstruction =
      unpatchify(block_transform(recon_coeffs, codec.transform, Direction::kInverse), codec.patch_size,
                 codec.channels);
  clamp_unit(out.reconstruction);
  return out;
}

// --- Training --------------------------------------------------------------------

struct Schedule {
  std::int64_t steps = 2000;
  std::int64_t batch = 32;
  std::uint64_t seed = 0;
  InitMode init = InitMode::kFromData;
  bool dead_code_reset = true;
};

struct StepRecord {
  std::int64_t step = 0;
  LossBreakdown loss;
  std::vector<double> perplexity;         // per level, on this batch
  double pooled_perplexity = 0.0;         // all levels concatenated, on this batch
  double normalized_perplexity = 0.0;
  double gini = 0.0;
  std::vector<std::int64_t> dead_codes;   // per level, detected after this batch
  std::vector<std::int64_t> resets;       // per level, codes actually reset
};

struct ResetEvent {
  std::int64_t step = 0;
  int level = 0;  // 0 = single / bottom, 1 = top
  std::vector<Index> codes;
};

struct TrainReport {
  std::vector<StepRecord> history;
  std::vector<ResetEvent> resets;

  std::int64_t total_resets() const {
    std::int64_t n = 0;
    for (const auto& e : resets) n += static_cast<std::int64_t>(e.codes.size());
    return n;
  }
};

using StepCallback = std::function<void(std::int64_t step)>;

namespace detail {

inline void record_pooled(StepRecord& rec, const UsageStats& pooled) {
  rec.pooled_perplexity = perplexity(pooled);
  rec.normalized_perplexity = normalized_perplexity(pooled);
  rec.gini = gini(pooled);
}

// Pushes this batch's counts, finds dead codes and (optionally) resets them.
inline std::int64_t maintain_codebook(Codebook& codebook, UsageWindow& usage, const ResetOptions& reset,
                                      const std::vector<std::int64_t>& counts, const Matrix& recent,
                                      bool enabled, std::uint64_t seed, std::int64_t step, int level,
                                      StepRecord& record, TrainReport& report) {
  usage.push(counts);
  const std::vector<Index> dead = detect_dead_codes(usage);
  record.dead_codes.push_back(static_cast<std::int64_t>(dead.size()));
  if (!enabled || dead.empty()) {
    record.resets.push_back(0);
    return 0;
  }
  reset_dead_codes(codebook, dead, recent, derive_seed(seed, level == 0 ? "reset/0" : "reset/1",
                                                       static_cast<std::uint64_t>(step)),
                   reset);
  usage.restart(dead);
  record.resets.push_back(static_cast<std::int64_t>(dead.size()));
  report.resets.push_back(ResetEvent{step, level, dead});
  return static_cast<std::int64_t>(dead.size());
}

inline void check_schedule(const Schedule& s, const PatchCorpus& corpus) {
  if (s.steps < 0) throw ConfigError("schedule: steps must be non-negative");
  if (s.batch < 1) throw ConfigError("schedule: batch must be positive");
  if (corpus.images() < 1) throw InputError("train: corpus is empty");
}

}  // namespace detail

inline TrainReport train(SingleLevelModel& model, const PatchCorpus& corpus, const Schedule& schedule,
                         const StepCallback& on_step = {}) {
  detail::check_schedule(schedule, corpus);
  TrainReport report;
  if (schedule.steps == 0) return report;
  BatchSampler sampler(corpus.images(), derive_seed(schedule.seed, "batches"));
  report.history.reserve(static_cast<std::size_t>(schedule.steps));
  for (std::int64_t step = 0; step < schedule.steps; ++step) {
    const auto ids = sampler.next(schedule.batch);
    const Matrix x = corpus.gather(ids);
    const StepResult r = straight_through_step(model.codec, model.codebook, x, step);
    StepRecord rec;
    rec.step = step;
    rec.loss = r.loss;
    auto counts = count_assignments(r.assignment.indices, model.codebook.size());
    rec.perplexity.push_back(perplexity(UsageStats(counts)));
    detail::record_pooled(rec, UsageStats(counts));
    detail::maintain_codebook(model.codebook, model.usage, model.reset, counts, r.z_e, schedule.dead_code_reset,
                              schedule.seed, step, 0, rec, report);
    report.history.push_back(std::move(rec));
    if (on_step) on_step(step);
  }
  return report;
}

inline TrainReport train(HierarchicalModel& model, const PatchCorpus& corpus, const Schedule& schedule,
                         const StepCallback& on_step = {}) {
  detail::check_schedule(schedule, corpus);
  TrainReport report;
  if (schedule.steps == 0) return report;
  BatchSampler sampler(corpus.images(), derive_seed(schedule.seed, "batches"));
  report.history.reserve(static_cast<std::size_t>(schedule.steps));
  for (std::int64_t step = 0; step < schedule.steps; ++step) {
    const auto ids = sampler.next(schedule.batch);
    const Matrix x = corpus.gather(ids);
    const HierStepResult r =
        hier_straight_through_step(model.codec, model.bottom, model.top, x, corpus.grid_h, corpus.grid_w, step);
    StepRecord rec;
    rec.step = step;
    rec.loss = r.loss.total;
    auto counts_b = count_assignments(r.bottom.indices, model.bottom.size());
    auto counts_t = count_assignments(r.top.indices, model.top.size());
    rec.perplexity.push_back(perplexity(UsageStats(counts_b)));
    rec.perplexity.push_back(perplexity(UsageStats(counts_t)));
    std::vector<std::int64_t> pooled = counts_b;
    pooled.insert(pooled.end(), counts_t.begin(), counts_t.end());
    detail::record_pooled(rec, UsageStats(std::move(pooled)));
    detail::maintain_codebook(model.bottom, model.bottom_usage, model.reset, counts_b, r.ze_bottom,
                              schedule.dead_code_reset, schedule.seed, step, 0, rec, report);
    detail::maintain_codebook(model.top, model.top_usage, model.reset, counts_t, r.ze_top, schedule.dead_code_reset,
                              schedule.seed, step, 1, rec, report);
    report.history.push_back(std::move(rec));
    if (on_step) on_step(step);
  }
  return report;
}

// --- Evaluation --------------------------------------------------------------------

struct Evaluation {
  double mse = 0.0;
  Psnr psnr;
  std::vector<UsageStats> levels;  // one per codebook
  UsageStats pooled;               // all codebooks concatenated
  std::int64_t dead_codes = 0;     // codes with zero assignments on the evaluation set
};

namespace detail {

inline double clamped_mse(const Matrix& recon, const Matrix& target) {
  const double sq = (recon.array().max(0.0).min(1.0) - target.array()).square().sum();
  return sq / static_cast<double>(target.size());
}

inline Evaluation finish_evaluation(double mse_value, std::vector<std::vector<std::int64_t>> level_counts) {
  Evaluation ev;
  ev.mse = mse_value;
  ev.psnr = Psnr::from_mse(mse_value);
  std::vector<std::int64_t> pooled;
  for (auto& counts : level_counts) {
    for (auto c : counts) {
      pooled.push_back(c);
      if (c == 0) ++ev.dead_codes;
    }
    ev.levels.emplace_back(std::move(counts));
  }
  ev.pooled = UsageStats(std::move(pooled));
  return ev;
}

}  // namespace detail

// Reconstruction MSE (clamped to [0,1]) and code usage over a whole corpus.
inline Evaluation evaluate(const SingleLevelModel& model, const PatchCorpus& corpus) {
  const Matrix z_e = model.codec.encode(corpus.patches);
  const AssignmentResult a = nearest_assign(z_e, model.codebook);
  const Matrix recon = model.codec.decode(a.quantized);
  return detail::finish_evaluation(detail::clamped_mse(recon, corpus.patches),
                                   {count_assignments(a.indices, model.codebook.size())});
}

inline Evaluation evaluate(const HierarchicalModel& model, const PatchCorpus& corpus) {
  const auto [ze_b, ze_t] = model.codec.encode(corpus.patches, corpus.grid_h, corpus.grid_w);
  const AssignmentResult b = nearest_assign(ze_b, model.bottom);
  const AssignmentResult t = nearest_assign(ze_t, model.top);
  const Matrix recon = model.codec.decode(b.quantized, t.quantized, corpus.grid_h, corpus.grid_w);
  return detail::finish_evaluation(detail::clamped_mse(recon, corpus.patches),
                                   {count_assignments(b.indices, model.bottom.size()),
                                    count_assignments(t.indices, model.top.size())});
}

}  // namespace vqforge
