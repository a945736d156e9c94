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
#include <deque>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vqforge/latent.hpp"
#include "vqforge/matrix.hpp"
#include "vqforge/rng.hpp"

namespace vqforge {

// K x D prototype matrix together with the exponential-moving-average
// statistics that drive it. entries[k] = ema_sums[k] / smoothed(ema_counts)[k]
// after every EMA step, where smoothing is additive (Laplace) on the counts
// followed by renormalisation to the original total mass.
class Codebook {
 public:
  static constexpr double kDefaultDecay = 0.99;
  static constexpr double kDefaultSmoothingEps = 1e-5;

  // Counts start at one and sums at the entries, so the first EMA step is
  // well posed.
  explicit Codebook(Matrix entries, double decay = kDefaultDecay,
                    double smoothing_eps = kDefaultSmoothingEps)
      : entries_(std::move(entries)), decay_(decay), smoothing_eps_(smoothing_eps) {
    ema_counts_ = Vector::Ones(entries_.rows());
    ema_sums_ = entries_;
    validate();
  }

  Codebook(Matrix entries, Vector ema_counts, Matrix ema_sums, double decay, double smoothing_eps)
      : entries_(std::move(entries)),
        ema_counts_(std::move(ema_counts)),
        ema_sums_(std::move(ema_sums)),
        decay_(decay),
        smoothing_eps_(smoothing_eps) {
    validate();
  }

  Index size() const { return entries_.rows(); }
  Index dim() const { return entries_.cols(); }

  const Matrix& entries() const { return entries_; }
  const Vector& ema_counts() const { return ema_counts_; }
  const Matrix& ema_sums() const { return ema_sums_; }
  double decay() const { return decay_; }
  double smoothing_eps() const { return smoothing_eps_; }

  Vector smoothed_counts() const {
    const double total = ema_counts_.sum();
    const double k = static_cast<double>(size());
    return ((ema_counts_.array() + smoothing_eps_) / (total + k * smoothing_eps_) * total).matrix();
  }

  // One EMA step given this batch's per-code counts and per-code vector sums.
  void ema_step(const Vector& batch_counts, const Matrix& batch_sums) {
    require_shape(batch_sums, size(), dim(), "Codebook::ema_step sums");
    if (batch_counts.size() != size()) {
      throw ContractViolation("Codebook::ema_step: counts length " +
                              std::to_string(batch_counts.size()) + " != K " +
                              std::to_string(size()));
    }
    ema_counts_ = decay_ * ema_counts_ + (1.0 - decay_) * batch_counts;
    ema_sums_ = decay_ * ema_sums_ + (1.0 - decay_) * batch_sums;
    if (ema_counts_.sum() <= 0.0) return;
    const Vector smoothed = smoothed_counts();
    for (Index k = 0; k < size(); ++k) {
      entries_.row(k) = ema_sums_.row(k) / smoothed(k);
    }
  }

  // Replaces one entry and restarts its statistics (count 1, sum = entry).
  void reset_entry(Index k, const Eigen::Ref<const Eigen::RowVectorXd>& value) {
    if (k < 0 || k >= size()) throw ContractViolation("Codebook::reset_entry: index out of range");
    if (value.size() != dim()) throw ContractViolation("Codebook::reset_entry: dimension mismatch");
    entries_.row(k) = value;
    ema_sums_.row(k) = value;
    ema_counts_(k) = 1.0;
  }

 private:
  void validate() const {
    if (entries_.rows() < 1 || entries_.cols() < 1) {
      throw ContractViolation("Codebook: K and D must both be >= 1");
    }
    if (ema_counts_.size() != entries_.rows()) {
      throw ContractViolation("Codebook: ema_counts length must equal K");
    }
    require_shape(ema_sums_, entries_.rows(), entries_.cols(), "Codebook ema_sums");
    if (!(decay_ >= 0.0 && decay_ < 1.0)) throw ContractViolation("Codebook: decay must lie in [0, 1)");
    if (!(smoothing_eps_ > 0.0)) throw ContractViolation("Codebook: smoothing_eps must be positive");
    if (first_non_finite_row(entries_) >= 0) throw InputError("Codebook: non-finite entry");
    if ((ema_counts_.array() < 0.0).any()) throw InputError("Codebook: negative ema count");
  }

  Matrix entries_;
  Vector ema_counts_;
  Matrix ema_sums_;
  double decay_;
  double smoothing_eps_;
};

struct AssignmentResult {
  std::vector<Index> indices;
  Matrix quantized;  // row n == codebook.entries().row(indices[n]) at assignment time
  Vector distances;  // squared Euclidean distance to the chosen code

  Index size() const { return static_cast<Index>(indices.size()); }
};

namespace detail {

// Sequential sum of squared differences. The brute-force tests reproduce this
// accumulation order, so both agree to the last bit.
inline double squared_distance(const double* a, const double* b, Index d) {
  double acc = 0.0;
  for (Index i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

// Up to this dimension a full exact scan beats GEMM screening.
inline constexpr Index kDirectMaxDim = 8;

// Exact scan over a transposed codebook. Each distance accumulates dimensions
// in the same order as squared_distance, so results match it bit for bit.
inline void direct_assign(const Matrix& vectors, const Matrix& codes, AssignmentResult& out) {
  const Index n = vectors.rows();
  const Index d = codes.cols();
  const Index k = codes.rows();
  const Matrix transposed = codes.transpose();
  std::vector<double> dist(static_cast<std::size_t>(k));
  for (Index row = 0; row < n; ++row) {
    const double* x = vectors.row(row).data();
    double* __restrict acc = dist.data();
    std::fill(dist.begin(), dist.end(), 0.0);
    for (Index j = 0; j < d; ++j) {
      const double xj = x[j];
      const double* __restrict column = transposed.row(j).data();
      for (Index c = 0; c < k; ++c) {
        const double diff = xj - column[c];
        acc[c] += diff * diff;
      }
    }
    Index best = 0;
    double best_dist = acc[0];
    for (Index c = 1; c < k; ++c) {
      if (acc[c] < best_dist) {
        best_dist = acc[c];
        best = c;
      }
    }
    out.indices[static_cast<std::size_t>(row)] = best;
    out.quantized.row(row) = codes.row(best);
    out.distances(row) = best_dist;
  }
}

}  // namespace detail

// Exhaustive nearest-code search with lowest-index tie-breaking.
//
// Candidates are screened with the expanded form |c|^2 - 2<x,c> evaluated as
// a GEMM, then every code within the rounding bound of the screened minimum
// is rescored with the direct difference formula. The result is identical to
// a plain double loop over (row, code).
inline AssignmentResult nearest_assign(const Matrix& vectors, const Codebook& codebook) {
  const Matrix& codes = codebook.entries();
  const Index n = vectors.rows();
  const Index d = codebook.dim();
  const Index k = codebook.size();
  if (vectors.cols() != d) {
    throw ContractViolation("nearest_assign: vector dimension " + std::to_string(vectors.cols()) +
                            " != codebook dimension " + std::to_string(d));
  }
  if (const Index bad = first_non_finite_row(vectors); bad >= 0) {
    throw InputError("nearest_assign: non-finite value in input row " + std::to_string(bad));
  }

  AssignmentResult out;
  out.indices.resize(static_cast<std::size_t>(n));
  out.quantized.resize(n, d);
  out.distances.resize(n);

  if (d <= detail::kDirectMaxDim) {
    detail::direct_assign(vectors, codes, out);
    return out;
  }

  const Vector code_norms = codes.rowwise().squaredNorm();
  const double max_code_norm = k > 0 ? code_norms.maxCoeff() : 0.0;
  const double rel_bound = 16.0 * static_cast<double>(d + 2) * std::numeric_limits<double>::epsilon();

  constexpr Index kChunk = 512;
  Matrix scores;
  std::vector<Index> candidates;
  candidates.reserve(8);
  for (Index begin = 0; begin < n; begin += kChunk) {
    const Index rows = std::min(kChunk, n - begin);
    scores.noalias() = vectors.middleRows(begin, rows) * codes.transpose();
    for (Index r = 0; r < rows; ++r) {
      const Index row = begin + r;
      double best_approx = std::numeric_limits<double>::infinity();
      for (Index c = 0; c < k; ++c) {
        const double approx = code_norms(c) - 2.0 * scores(r, c);
        if (approx < best_approx) best_approx = approx;
      }
      const double x_norm = vectors.row(row).squaredNorm();
      const double tolerance = rel_bound * (x_norm + max_code_norm) + std::numeric_limits<double>::min();
      candidates.clear();
      for (Index c = 0; c < k; ++c) {
        if (code_norms(c) - 2.0 * scores(r, c) <= best_approx + tolerance) candidates.push_back(c);
      }
      const double* x = vectors.row(row).data();
      Index best = candidates.front();
      double best_dist = detail::squared_distance(x, codes.row(best).data(), d);
      for (std::size_t i = 1; i < candidates.size(); ++i) {
        const double dist = detail::squared_distance(x, codes.row(candidates[i]).data(), d);
        if (dist < best_dist) {
          best_dist = dist;
          best = candidates[i];
        }
      }
      out.indices[static_cast<std::size_t>(row)] = best;
      out.quantized.row(row) = codes.row(best);
      out.distances(row) = best_dist;
    }
  }
  return out;
}

// Number of assignments per code.
inline std::vector<std::int64_t> count_assignments(std::span<const Index> indices, Index num_codes) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(num_codes), 0);
  for (Index idx : indices) {
    if (idx < 0 || idx >= num_codes) throw ContractViolation("count_assignments: index out of range");
    ++counts[static_cast<std::size_t>(idx)];
  }
  return counts;
}

// counts <- decay*counts + (1-decay)*n_k, sums <- decay*sums + (1-decay)*S_k,
// entries <- sums / smoothed(counts). Unused codes still decay.
inline void ema_update(Codebook& codebook, const Matrix& vectors, const AssignmentResult& assignment) {
  if (vectors.rows() != assignment.size()) {
    throw ContractViolation("ema_update: " + std::to_string(vectors.rows()) + " vectors but " +
                            std::to_string(assignment.size()) + " assignments");
  }
  if (vectors.cols() != codebook.dim()) throw ContractViolation("ema_update: dimension mismatch");
  Vector batch_counts = Vector::Zero(codebook.size());
  Matrix batch_sums = Matrix::Zero(codebook.size(), codebook.dim());
  for (Index n = 0; n < vectors.rows(); ++n) {
    const Index k = assignment.indices[static_cast<std::size_t>(n)];
    if (k < 0 || k >= codebook.size()) throw ContractViolation("ema_update: index out of range");
    batch_counts(k) += 1.0;
    batch_sums.row(k) += vectors.row(n);
  }
  codebook.ema_step(batch_counts, batch_sums);
}

namespace detail {

inline Eigen::RowVectorXd column_stddev(const Matrix& samples) {
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const double n = static_cast<double>(samples.rows());
  return ((samples.rowwise() - mean).array().square().colwise().sum() / n).sqrt().matrix();
}

}  // namespace detail

struct InitOptions {
  double decay = Codebook::kDefaultDecay;
  double smoothing_eps = Codebook::kDefaultSmoothingEps;
  // Jitter for re-drawn samples when M < K, as a fraction of per-dim std.
  double jitter_scale = 0.01;
};

// Codebook entries drawn from data. With M >= K the entries are K distinct
// sample rows (partial Fisher-Yates); otherwise all samples are used and the
// remainder are re-drawn samples plus small Gaussian jitter.
inline Codebook init_from_samples(const Matrix& samples, Index k, std::uint64_t rng_seed,
                                  const InitOptions& options = {}) {
  const Index m = samples.rows();
  if (m == 0) throw InputError("init_from_samples: no samples");
  if (k < 1) throw ContractViolation("init_from_samples: K must be >= 1");
  if (const Index bad = first_non_finite_row(samples); bad >= 0) {
    throw InputError("init_from_samples: non-finite value in sample row " + std::to_string(bad));
  }
  Rng rng(rng_seed);
  Matrix entries(k, samples.cols());
  if (m >= k) {
    std::vector<Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = 0; i < k; ++i) {
      const auto j = i + static_cast<Index>(rng.index(static_cast<std::uint64_t>(m - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      entries.row(i) = samples.row(order[static_cast<std::size_t>(i)]);
    }
  } else {
    entries.topRows(m) = samples;
    const Eigen::RowVectorXd sigma = options.jitter_scale * detail::column_stddev(samples);
    for (Index i = m; i < k; ++i) {
      entries.row(i) = samples.row(static_cast<Index>(rng.index(static_cast<std::uint64_t>(m))));
      for (Index c = 0; c < entries.cols(); ++c) entries(i, c) += sigma(c) * rng.normal();
    }
  }
  return Codebook(std::move(entries), options.decay, options.smoothing_eps);
}

// Ring buffer of per-batch assignment counts used to find dead codes.
//
// Detection is armed once the buffer holds window_len batches. A code that was
// just reset has its history cleared and is armed again only after it has been
// observed for a full window.
class UsageWindow {
 public:
  static constexpr std::size_t kDefaultWindow = 10;
  static constexpr std::int64_t kDefaultThreshold = 2;

  explicit UsageWindow(Index num_codes, std::size_t window_len = kDefaultWindow,
                       std::int64_t threshold = kDefaultThreshold)
      : num_codes_(num_codes),
        window_len_(window_len),
        threshold_(threshold),
        age_(static_cast<std::size_t>(num_codes), 0) {
    if (num_codes < 1) throw ContractViolation("UsageWindow: need at least one code");
    if (window_len < 1) throw ContractViolation("UsageWindow: window_len must be positive");
    if (threshold < 0) throw ContractViolation("UsageWindow: threshold must be non-negative");
  }

  Index num_codes() const { return num_codes_; }
  std::size_t window_len() const { return window_len_; }
  std::int64_t threshold() const { return threshold_; }
  std::size_t batches() const { return batches_.size(); }
  bool full() const { return batches_.size() == window_len_; }
  bool armed(Index k) const { return full() && age_[static_cast<std::size_t>(k)] >= window_len_; }

  void push(std::vector<std::int64_t> batch_counts) {
    if (static_cast<Index>(batch_counts.size()) != num_codes_) {
      throw ContractViolation("UsageWindow::push: expected " + std::to_string(num_codes_) + " counts");
    }
    for (std::int64_t c : batch_counts) {
      if (c < 0) throw InputError("UsageWindow::push: negative count");
    }
    if (batches_.size() == window_len_) batches_.pop_front();
    batches_.push_back(std::move(batch_counts));
    for (auto& a : age_) a = std::min(a + 1, window_len_);
  }

  std::vector<std::int64_t> aggregate() const {
    std::vector<std::int64_t> total(static_cast<std::size_t>(num_codes_), 0);
    for (const auto& batch : batches_) {
      for (std::size_t k = 0; k < total.size(); ++k) total[k] += batch[k];
    }
    return total;
  }

  // Forget the history of codes that were just reset.
  void restart(std::span<const Index> codes) {
    for (Index k : codes) {
      const auto slot = static_cast<std::size_t>(k);
      for (auto& batch : batches_) batch[slot] = 0;
      age_[slot] = 0;
    }
  }

 private:
  Index num_codes_;
  std::size_t window_len_;
  std::int64_t threshold_;
  std::deque<std::vector<std::int64_t>> batches_;
  std::vector<std::size_t> age_;
};

// Codes whose windowed count is below the threshold. Empty until armed.
inline std::vector<Index> detect_dead_codes(const UsageWindow& window) {
  if (window.batches() == 0) throw InputError("detect_dead_codes: window holds no batches");
  std::vector<Index> dead;
  if (!window.full()) return dead;
  const auto totals = window.aggregate();
  for (Index k = 0; k < window.num_codes(); ++k) {
    if (window.armed(k) && totals[static_cast<std::size_t>(k)] < window.threshold()) dead.push_back(k);
  }
  return dead;
}

struct ResetOptions {
  Index sample_size = 8;      // recent outputs averaged per reset code
  double jitter_scale = 0.01;  // Gaussian jitter, fraction of per-dim std
};

// Re-seeds every dead code at the mean of a random subset of recent encoder
// outputs plus a little jitter. Live codes are untouched.
inline void reset_dead_codes(Codebook& codebook, std::span<const Index> dead,
                             const Matrix& recent_outputs, std::uint64_t rng_seed,
                             const ResetOptions& options = {}) {
  if (dead.empty()) return;
  const Index r = recent_outputs.rows();
  if (r == 0) throw InputError("reset_dead_codes: no recent outputs");
  if (recent_outputs.cols() != codebook.dim()) {
    throw ContractViolation("reset_dead_codes: dimension mismatch");
  }
  for (Index k : dead) {
    if (k < 0 || k >= codebook.size()) throw ContractViolation("reset_dead_codes: dead index out of range");
  }
  Rng rng(rng_seed);
  const Index s = std::clamp<Index>(options.sample_size, 1, r);
  const Eigen::RowVectorXd sigma = options.jitter_scale * detail::column_stddev(recent_outputs);
  std::vector<Index> order(static_cast<std::size_t>(r));
  Eigen::RowVectorXd value(codebook.dim());
  for (Index k : dead) {
    std::iota(order.begin(), order.end(), Index{0});
    value.setZero();
    for (Index i = 0; i < s; ++i) {
      const auto j = i + static_cast<Index>(rng.index(static_cast<std::uint64_t>(r - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      value += recent_outputs.row(order[static_cast<std::size_t>(i)]);
    }
    value /= static_cast<double>(s);
    for (Index c = 0; c < value.size(); ++c) value(c) += sigma(c) * rng.normal();
    codebook.reset_entry(k, value);
  }
}

// beta * mean squared difference between encoder outputs and their codes.
inline double commitment_loss(const Matrix& z_e, const Matrix& z_q, double beta) {
  if (z_e.rows() != z_q.rows() || z_e.cols() != z_q.cols()) {
    throw ContractViolation("commitment_loss: shape mismatch");
  }
  if (beta < 0.0) throw ContractViolation("commitment_loss: beta must be non-negative");
  if (z_e.size() == 0) return 0.0;
  return beta * (z_e - z_q).squaredNorm() / static_cast<double>(z_e.size());
}

inline double commitment_loss(const LatentGrid& z_e, const LatentGrid& z_q, double beta) {
  if (!z_e.same_shape(z_q)) throw ContractViolation("commitment_loss: grid shape mismatch");
  return commitment_loss(z_e.values, z_q.values, beta);
}

}  // namespace vqforge
