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

// Reference implementations used by the unit and acceptance tests. They are
// written from the definitions and share no code paths with the library
// beyond its data types.

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <random>
#include <utility>
#include <vector>

#include "vqforge/budget.hpp"
#include "vqforge/matrix.hpp"
#include "vqforge/pipeline.hpp"
#include "vqforge/transform.hpp"

namespace vqforge::oracle {

struct BruteAssign {
  std::vector<Index> indices;
  std::vector<double> distances;
};

// Double loop over all codes; strict < keeps the lowest index on ties. The
// per-pair sum runs over dimensions in order, as a plain loop would.
inline BruteAssign brute_force_assign(const Matrix& x, const Matrix& codes) {
  BruteAssign out;
  for (Index n = 0; n < x.rows(); ++n) {
    Index best = -1;
    double best_d = 0.0;
    for (Index k = 0; k < codes.rows(); ++k) {
      double acc = 0.0;
      for (Index j = 0; j < x.cols(); ++j) {
        const double diff = x(n, j) - codes(k, j);
        acc += diff * diff;
      }
      if (best < 0 || acc < best_d) {
        best = k;
        best_d = acc;
      }
    }
    out.indices.push_back(best);
    out.distances.push_back(best_d);
  }
  return out;
}

class Random {
 public:
  explicit Random(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  Matrix gaussian(Index rows, Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal();
    return m;
  }
  Matrix unit(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(0.0, 1.0);
    return m;
  }
  // Small integers make exact ties common.
  Matrix lattice(Index rows, Index cols, int range) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(integer(-range, range));
    return m;
  }
  Image image(Index h, Index w, Index c) {
    Image img(h, w, c);
    for (auto& v : img.pixels) v = uniform(0.0, 1.0);
    return img;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// Orthonormal DCT-II on one p x p channel, straight from the cosine formula:
// coefficient (u, v) = a(u) a(v) sum_xy f(y, x) cos(pi (2y+1) u / 2p) cos(pi (2x+1) v / 2p).
inline double dct_coefficient(const std::vector<double>& patch, Index p, Index u, Index v) {
  const auto a = [p](Index f) { return f == 0 ? std::sqrt(1.0 / p) : std::sqrt(2.0 / p); };
  double acc = 0.0;
  for (Index y = 0; y < p; ++y) {
    for (Index x = 0; x < p; ++x) {
      acc += patch[static_cast<std::size_t>(y * p + x)] * std::cos(M_PI * (2 * y + 1) * u / (2.0 * p)) *
             std::cos(M_PI * (2 * x + 1) * v / (2.0 * p));
    }
  }
  return a(u) * a(v) * acc;
}

// Surrogate objective whose ordinary gradient is the straight-through
// gradient: the quantizer is replaced by z_e + delta with delta = z_q - z_e
// frozen at the expansion point.
inline double single_surrogate_loss(const LinearCodec& c, const Matrix& x, const Matrix& delta, const Matrix& z_q) {
  const Matrix& t = c.transform.basis();
  const Matrix z_e = x * t.transpose() * c.analysis * c.projection;
  const Matrix recon = (z_e + delta) * c.unprojection * c.synthesis * t;
  const double rec = (recon - x).squaredNorm() / static_cast<double>(x.size());
  const double com = c.beta * (z_e - z_q).squaredNorm() / static_cast<double>(z_e.size());
  return rec + com;
}

// Average of each 2x2 block of cells for image-major rows.
inline Matrix pool2x(const Matrix& fine, Index gh, Index gw) {
  const Index cells = gh * gw;
  const Index images = fine.rows() / cells;
  Matrix out = Matrix::Zero(images * (gh / 2) * (gw / 2), fine.cols());
  for (Index i = 0; i < images; ++i) {
    for (Index y = 0; y < gh; ++y) {
      for (Index x = 0; x < gw; ++x) {
        out.row(i * (gh / 2) * (gw / 2) + (y / 2) * (gw / 2) + x / 2) += 0.25 * fine.row(i * cells + y * gw + x);
      }
    }
  }
  return out;
}

inline Matrix dup2x(const Matrix& coarse, Index gh, Index gw) {
  const Index cells = gh * gw;
  const Index images = coarse.rows() / cells;
  Matrix out(images * cells * 4, coarse.cols());
  for (Index i = 0; i < images; ++i) {
    for (Index y = 0; y < 2 * gh; ++y) {
      for (Index x = 0; x < 2 * gw; ++x) {
        out.row(i * cells * 4 + y * 2 * gw + x) = coarse.row(i * cells + (y / 2) * gw + x / 2);
      }
    }
  }
  return out;
}

inline double hier_surrogate_loss(const HierCodec& c, const Matrix& x, Index gh, Index gw, const Matrix& delta_b,
                                  const Matrix& zq_b, const Matrix& delta_t, const Matrix& zq_t) {
  const Matrix& t = c.transform.basis();
  const Index d = c.code_dim();
  const Matrix ze_b = x * t.transpose() * c.analysis * c.bottom_projection;
  const Matrix ze_t = pool2x(x, gh, gw) * t.transpose() * c.analysis * c.top_encoder * c.top_projection;
  const Matrix fb = c.fusion.topRows(d);
  const Matrix ft = c.fusion.bottomRows(d);
  const Matrix recon =
      (ze_b + delta_b) * fb * c.synthesis * t + dup2x((ze_t + delta_t) * ft * c.synthesis * t, gh / 2, gw / 2);
  const double rec = (recon - x).squaredNorm() / static_cast<double>(x.size());
  const double com_b = c.beta * (ze_b - zq_b).squaredNorm() / static_cast<double>(ze_b.size());
  const double com_t = c.beta * (ze_t - zq_t).squaredNorm() / static_cast<double>(ze_t.size());
  return rec + com_b + com_t;
}

// Central differences of f over every entry of m.
template <class F>
Matrix finite_difference(Matrix& m, F&& f, double eps = 1e-4) {
  Matrix g(m.rows(), m.cols());
  for (Index i = 0; i < m.size(); ++i) {
    const double keep = m.data()[i];
    m.data()[i] = keep + eps;
    const double up = f();
    m.data()[i] = keep - eps;
    const double down = f();
    m.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), Frobenius norms; 0 when both vanish.
inline double relative_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

// Entropy-based perplexity computed independently from the library.
inline double hand_perplexity(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log2(v);
  }
  return std::pow(2.0, h);
}


// Smallest gap between the best and second-best squared distance of any row.
inline double voronoi_margin(const Matrix& x, const Matrix& codes) {
  double margin = std::numeric_limits<double>::infinity();
  for (Index n = 0; n < x.rows(); ++n) {
    double best = std::numeric_limits<double>::infinity(), second = best;
    for (Index k = 0; k < codes.rows(); ++k) {
      const double d = (x.row(n) - codes.row(k)).squaredNorm();
      if (d < best) {
        second = best;
        best = d;
      } else if (d < second) {
        second = d;
      }
    }
    margin = std::min(margin, second - best);
  }
  return margin;
}

struct GradientCheck {
  std::vector<std::pair<std::string, double>> errors;  // per trainable matrix
  double worst() const {
    double w = 0.0;
    for (const auto& e : errors) w = std::max(w, e.second);
    return w;
  }
};

inline Matrix frozen_codes(const Matrix& z_e, Random& rnd) {
  const double scale = std::max(0.1, std::sqrt(z_e.squaredNorm() / static_cast<double>(z_e.size())));
  Matrix book = rnd.gaussian(rnd.integer(1, 16), z_e.cols(), scale);
  while (voronoi_margin(z_e, book) <= 1e-6) book = rnd.gaussian(book.rows(), z_e.cols(), scale);
  const auto a = brute_force_assign(z_e, book);
  Matrix q(z_e.rows(), z_e.cols());
  for (Index i = 0; i < q.rows(); ++i) q.row(i) = book.row(a.indices[static_cast<std::size_t>(i)]);
  return q;
}

// Random codec shape, parameters, batch and codebook; assignments frozen.
inline GradientCheck check_single_gradients(std::uint64_t seed) {
  Random rnd(seed);
  const Index p = rnd.integer(1, 2) * 2;
  const Index ch = rnd.integer(0, 1) == 0 ? 1 : 3;
  const Index dim = p * p * ch;
  const Index c = rnd.integer(1, std::min<Index>(dim, 12));
  const Index d = rnd.integer(1, 8);
  const Index n = rnd.integer(4, 40);
  LinearCodec codec(p, ch, rnd.gaussian(dim, c, 0.5), rnd.gaussian(c, dim, 0.5), rnd.gaussian(c, d, 0.5),
                    rnd.gaussian(d, c, 0.5), 0.0, rnd.uniform(0.0, 1.0));
  const Matrix x = rnd.unit(n, dim);
  const Matrix z_e = codec.encode(x);
  const Matrix z_q = frozen_codes(z_e, rnd);
  const Matrix delta = z_q - z_e;
  const CodecGradients g = straight_through_gradients(codec, x, z_e, z_q, nullptr);
  const auto loss = [&] { return single_surrogate_loss(codec, x, delta, z_q); };
  GradientCheck out;
  out.errors.emplace_back("A", relative_error(g.analysis, finite_difference(codec.analysis, loss)));
  out.errors.emplace_back("B", relative_error(g.synthesis, finite_difference(codec.synthesis, loss)));
  out.errors.emplace_back("P", relative_error(g.projection, finite_difference(codec.projection, loss)));
  out.errors.emplace_back("Q", relative_error(g.unprojection, finite_difference(codec.unprojection, loss)));
  return out;
}

inline GradientCheck check_hier_gradients(std::uint64_t seed) {
  Random rnd(seed);
  const Index p = 2;
  const Index ch = rnd.integer(0, 1) == 0 ? 1 : 3;
  const Index dim = p * p * ch;
  const Index c = rnd.integer(1, dim);
  const Index d = rnd.integer(1, 6);
  const Index gh = 2 * rnd.integer(1, 2);
  const Index gw = 2 * rnd.integer(1, 2);
  const Index images = rnd.integer(1, 3);
  HierCodec codec(p, ch, rnd.gaussian(dim, c, 0.5), rnd.gaussian(c, d, 0.5), rnd.gaussian(c, c, 0.5),
                  rnd.gaussian(c, d, 0.5), rnd.gaussian(2 * d, c, 0.5), rnd.gaussian(c, dim, 0.5), 0.0,
                  rnd.uniform(0.0, 1.0));
  const Matrix x = rnd.unit(images * gh * gw, dim);
  const auto [ze_b, ze_t] = codec.encode(x, gh, gw);
  const Matrix zq_b = frozen_codes(ze_b, rnd);
  const Matrix zq_t = frozen_codes(ze_t, rnd);
  const Matrix delta_b = zq_b - ze_b;
  const Matrix delta_t = zq_t - ze_t;
  const HierGradients g = hier_straight_through_gradients(codec, x, gh, gw, ze_b, zq_b, ze_t, zq_t, nullptr);
  const auto loss = [&] { return hier_surrogate_loss(codec, x, gh, gw, delta_b, zq_b, delta_t, zq_t); };
  GradientCheck out;
  out.errors.emplace_back("A", relative_error(g.analysis, finite_difference(codec.analysis, loss)));
  out.errors.emplace_back("P_b", relative_error(g.bottom_projection, finite_difference(codec.bottom_projection, loss)));
  out.errors.emplace_back("E", relative_error(g.top_encoder, finite_difference(codec.top_encoder, loss)));
  out.errors.emplace_back("P_t", relative_error(g.top_projection, finite_difference(codec.top_projection, loss)));
  out.errors.emplace_back("F", relative_error(g.fusion, finite_difference(codec.fusion, loss)));
  out.errors.emplace_back("B", relative_error(g.synthesis, finite_difference(codec.synthesis, loss)));
  return out;
}


// Reference matched configurations: {D, K_s, K_h} on a 64x64 bottom grid
// with a 32x32 top grid, C_h = 128 and C_s = 160.
struct MatchedRow {
  std::int64_t code_dim;
  std::int64_t single_codes;
  std::int64_t hier_codes;
};
inline constexpr MatchedRow kMatchedRows[] = {
    {8, 1024, 512}, {8, 2048, 1024}, {8, 4096, 2048}, {8, 8192, 4096},
    {16, 8192, 4096}, {32, 8192, 4096}, {64, 8192, 4096}, {128, 8192, 4096},
};

}  // namespace vqforge::oracle
