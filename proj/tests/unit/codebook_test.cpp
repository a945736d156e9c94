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


#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "vqforge/codebook.hpp"
#include "vqforge/metrics.hpp"

namespace vqforge {
namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> init) {
  Matrix m(static_cast<Index>(init.size()), static_cast<Index>(init.begin()->size()));
  Index r = 0;
  for (const auto& row : init) {
    Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

TEST(NearestAssign, PicksCloserCode) {
  const Codebook cb(rows({{0, 0}, {1, 1}}));
  const auto a = nearest_assign(rows({{0.2, 0.1}}), cb);
  EXPECT_EQ(a.indices[0], 0);
  EXPECT_EQ(a.quantized(0, 0), 0.0);
  EXPECT_EQ(a.quantized(0, 1), 0.0);
  EXPECT_NEAR(a.distances(0), 0.05, 1e-15);
}

TEST(NearestAssign, ExactMatchHasZeroDistance) {
  const Codebook cb(rows({{5, 5}, {1, 2}, {3, 3}, {-1, 4}, {0, 9}}));
  const auto a = nearest_assign(rows({{-1, 4}}), cb);
  EXPECT_EQ(a.indices[0], 3);
  EXPECT_EQ(a.distances(0), 0.0);
}

TEST(NearestAssign, TieGoesToLowerIndex) {
  const Codebook cb(rows({{9, 9}, {-1, 0}, {1, 0}}));
  EXPECT_EQ(nearest_assign(rows({{0, 0}}), cb).indices[0], 1);
}

TEST(NearestAssign, DuplicateCodesResolveToFirst) {
  oracle::Random rnd(3);
  for (Index d : {2, 8, 12}) {
    Matrix codes = rnd.gaussian(20, d);
    codes.row(15) = codes.row(4);
    const Codebook cb(codes);
    const auto a = nearest_assign(codes.row(15), cb);
    EXPECT_EQ(a.indices[0], 4) << "d=" << d;
  }
}

TEST(NearestAssign, DimensionMismatchIsContractViolation) {
  const Codebook cb(rows({{0, 0}}));
  EXPECT_THROW(nearest_assign(Matrix::Zero(3, 3), cb), ContractViolation);
}

TEST(NearestAssign, NonFiniteRowIsNamed) {
  const Codebook cb(rows({{0, 0}}));
  Matrix x = Matrix::Zero(4, 2);
  x(2, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    nearest_assign(x, cb);
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(NearestAssign, EmptyInputGivesEmptyResult) {
  const Codebook cb(rows({{0, 0}}));
  EXPECT_EQ(nearest_assign(Matrix(0, 2), cb).size(), 0);
}

// Both kernels (direct for small D, screened GEMM above) against the oracle.
TEST(NearestAssign, MatchesBruteForce) {
  oracle::Random rnd(11);
  for (int trial = 0; trial < 200; ++trial) {
    const Index k = rnd.integer(1, 64);
    const Index n = rnd.integer(1, 256);
    const Index d = rnd.integer(1, 16);
    const bool lattice = trial % 2 == 0;
    const Matrix codes = lattice ? rnd.lattice(k, d, 2) : rnd.gaussian(k, d);
    const Matrix x = lattice ? rnd.lattice(n, d, 2) : rnd.gaussian(n, d);
    const auto got = nearest_assign(x, Codebook(codes));
    const auto want = oracle::brute_force_assign(x, codes);
    ASSERT_EQ(got.indices, want.indices) << "trial " << trial;
    for (Index i = 0; i < n; ++i) {
      ASSERT_EQ(got.distances(i), want.distances[static_cast<std::size_t>(i)]);
      ASSERT_TRUE((got.quantized.row(i).array() == codes.row(got.indices[static_cast<std::size_t>(i)]).array()).all());
    }
  }
}

// Large-magnitude inputs push the screening bound; ties must still resolve low.
TEST(NearestAssign, MatchesBruteForceAtLargeOffsets) {
  oracle::Random rnd(12);
  for (int trial = 0; trial < 40; ++trial) {
    const Index d = rnd.integer(9, 16);
    Matrix codes = rnd.lattice(48, d, 1);
    codes.array() += 1e4;
    Matrix x = rnd.lattice(100, d, 1);
    x.array() += 1e4;
    const auto got = nearest_assign(x, Codebook(codes));
    ASSERT_EQ(got.indices, oracle::brute_force_assign(x, codes).indices);
  }
}

TEST(NearestAssign, QuantizationIsIdempotent) {
  oracle::Random rnd(13);
  for (Index d : {3, 8, 16, 40}) {
    const Codebook cb(rnd.gaussian(50, d));
    const auto first = nearest_assign(rnd.gaussian(300, d), cb);
    const auto second = nearest_assign(first.quantized, cb);
    EXPECT_TRUE((second.quantized.array() == first.quantized.array()).all()) << "d=" << d;
  }
}

TEST(EmaUpdate, ZeroDecayMovesCodeToBatchMean) {
  Codebook cb(rows({{0, 0}, {10, 10}}), 0.0, 1e-12);
  const Matrix x = rows({{1, 2}, {3, 4}, {5, 0}});
  AssignmentResult a;
  a.indices = {0, 0, 0};
  ema_update(cb, x, a);
  EXPECT_NEAR(cb.entries()(0, 0), 3.0, 1e-9);
  EXPECT_NEAR(cb.entries()(0, 1), 2.0, 1e-9);
}

TEST(EmaUpdate, UnusedCodeDecaysCountsAndKeepsEntry) {
  const Matrix init = rows({{0.5, -1}, {2, 3}});
  Codebook cb(init, 0.99, 1e-5);
  const Matrix x = rows({{0.4, -0.9}, {0.6, -1.2}});
  const auto a = nearest_assign(x, cb);
  ASSERT_EQ(a.indices, (std::vector<Index>{0, 0}));
  ema_update(cb, x, a);
  EXPECT_DOUBLE_EQ(cb.ema_counts()(1), 0.99);
  EXPECT_NEAR(cb.entries()(1, 0), 2.0, 1e-4);
  EXPECT_NEAR(cb.entries()(1, 1), 3.0, 1e-4);
}

TEST(EmaUpdate, MismatchedAssignmentIsContractViolation) {
  Codebook cb(rows({{0, 0}}));
  AssignmentResult a;
  a.indices = {0};
  EXPECT_THROW(ema_update(cb, Matrix::Zero(2, 2), a), ContractViolation);
}

// Repeating the same batch: counts and sums follow a geometric series in the
// decay, so entries have a closed form at every step.
TEST(EmaUpdate, FollowsClosedFormAndConvergesMonotonically) {
  const double decay = 0.9, eps = 1e-5;
  const Matrix init = rows({{-3, 0}, {3, 0}});
  Codebook cb(init, decay, eps);
  const Matrix x = rows({{-1, 1}, {-1.5, 0.5}, {2, -1}, {2.5, 0}, {1.5, 1}});
  const auto a = nearest_assign(x, cb);
  const std::vector<double> n = {2, 3};
  const Matrix s = rows({{-2.5, 1.5}, {6, 0}});
  double prev[2] = {1e9, 1e9};
  for (int t = 1; t <= 200; ++t) {
    ema_update(cb, x, a);
    const double g = std::pow(decay, t);
    double counts[2], total = 0.0;
    for (int k = 0; k < 2; ++k) total += counts[k] = g + (1 - g) * n[static_cast<std::size_t>(k)];
    for (int k = 0; k < 2; ++k) {
      const double smoothed = (counts[k] + eps) / (total + 2 * eps) * total;
      const Eigen::RowVector2d sum = g * init.row(k) + (1 - g) * s.row(k);
      const Eigen::RowVector2d want = sum / smoothed;
      ASSERT_NEAR((cb.entries().row(k) - want).norm(), 0.0, 1e-12) << "t=" << t << " k=" << k;
      const double limit_count = (n[static_cast<std::size_t>(k)] + eps) / (5.0 + 2 * eps) * 5.0;
      const double gap = (cb.entries().row(k) - s.row(k) / limit_count).norm();
      ASSERT_LE(gap, prev[k] + 1e-12);
      prev[k] = gap;
    }
  }
}

TEST(EmaUpdate, FixedClustersConvergeToMeans) {
  oracle::Random rnd(21);
  const Matrix centers = rows({{-5, -5, 0}, {5, 5, 0}, {0, 0, 8}});
  Matrix x(60, 3);
  for (Index i = 0; i < 60; ++i) x.row(i) = centers.row(i % 3) + 0.3 * rnd.gaussian(1, 3);
  Matrix means = Matrix::Zero(3, 3);
  for (Index i = 0; i < 60; ++i) means.row(i % 3) += x.row(i) / 20.0;
  Codebook cb(centers, 0.99, 1e-5);
  const auto a = nearest_assign(x, cb);
  for (int t = 0; t < 3000; ++t) {
    ema_update(cb, x, a);
    ASSERT_EQ(nearest_assign(x, cb).indices, a.indices);
  }
  // Smoothing shifts the fixed point by O(eps); with equal cluster sizes it
  // cancels exactly.
  EXPECT_LT((cb.entries() - means).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(InitFromSamples, SquareCaseIsPermutation) {
  oracle::Random rnd(31);
  const Matrix s = rnd.gaussian(16, 4);
  const Codebook cb = init_from_samples(s, 16, 5);
  std::vector<bool> seen(16, false);
  for (Index k = 0; k < 16; ++k) {
    bool found = false;
    for (Index m = 0; m < 16; ++m) {
      if ((cb.entries().row(k).array() == s.row(m).array()).all()) {
        EXPECT_FALSE(seen[static_cast<std::size_t>(m)]);
        seen[static_cast<std::size_t>(m)] = found = true;
      }
    }
    EXPECT_TRUE(found);
  }
  EXPECT_TRUE((cb.ema_counts().array() == 1.0).all());
  EXPECT_TRUE((cb.ema_sums().array() == cb.entries().array()).all());
}

TEST(InitFromSamples, DeterministicPerSeed) {
  oracle::Random rnd(32);
  const Matrix s = rnd.gaussian(100, 6);
  EXPECT_TRUE((init_from_samples(s, 30, 9).entries().array() == init_from_samples(s, 30, 9).entries().array()).all());
  EXPECT_FALSE((init_from_samples(s, 30, 9).entries().array() == init_from_samples(s, 30, 10).entries().array()).all());
}

TEST(InitFromSamples, EntriesAreDistinctSampleRows) {
  oracle::Random rnd(33);
  const Matrix s = rnd.gaussian(1000, 8);
  const Codebook cb = init_from_samples(s, 64, 1);
  std::set<Index> used;
  for (Index k = 0; k < 64; ++k) {
    Index hit = -1;
    for (Index m = 0; m < s.rows() && hit < 0; ++m) {
      if ((cb.entries().row(k).array() == s.row(m).array()).all()) hit = m;
    }
    ASSERT_GE(hit, 0) << "entry " << k;
    used.insert(hit);
  }
  EXPECT_EQ(used.size(), 64u);
}

TEST(InitFromSamples, FewSamplesAreReusedWithJitter) {
  const Matrix s = rows({{0, 0}, {1, 2}, {2, 4}});
  const Codebook cb = init_from_samples(s, 10, 4);
  EXPECT_TRUE((cb.entries().topRows(3).array() == s.array()).all());
  for (Index k = 3; k < 10; ++k) {
    double best = 1e9;
    for (Index m = 0; m < 3; ++m) best = std::min(best, (cb.entries().row(k) - s.row(m)).norm());
    EXPECT_GT(best, 0.0);
    EXPECT_LT(best, 0.2);
  }
}

TEST(InitFromSamples, NoSamplesIsInputError) {
  EXPECT_THROW(init_from_samples(Matrix(0, 3), 4, 0), InputError);
}

UsageWindow window_with(Index k, std::size_t len, std::int64_t threshold, const std::vector<std::vector<std::int64_t>>& batches) {
  UsageWindow w(k, len, threshold);
  for (const auto& b : batches) w.push(b);
  return w;
}

TEST(DeadCodes, RareCodeIsDeadOnceFull) {
  std::vector<std::vector<std::int64_t>> batches(10, {5, 0, 3});
  batches[4][1] = 1;
  const auto w = window_with(3, 10, 2, batches);
  EXPECT_EQ(detect_dead_codes(w), (std::vector<Index>{1}));
}

TEST(DeadCodes, WellUsedCodesAreAlive) {
  const auto w = window_with(3, 10, 2, std::vector<std::vector<std::int64_t>>(10, {1, 1, 1}));
  EXPECT_TRUE(detect_dead_codes(w).empty());
}

TEST(DeadCodes, NotArmedUntilFull) {
  const auto w = window_with(3, 10, 2, std::vector<std::vector<std::int64_t>>(3, {9, 0, 0}));
  EXPECT_TRUE(detect_dead_codes(w).empty());
}

TEST(DeadCodes, EmptyWindowIsInputError) {
  EXPECT_THROW(detect_dead_codes(UsageWindow(3)), InputError);
}

TEST(DeadCodes, RingBufferDropsOldestBatch) {
  UsageWindow w(2, 3, 1);
  w.push({4, 0});
  w.push({0, 1});
  w.push({0, 1});
  w.push({0, 1});
  EXPECT_EQ(w.batches(), 3u);
  EXPECT_EQ(w.aggregate(), (std::vector<std::int64_t>{0, 3}));
  EXPECT_EQ(detect_dead_codes(w), (std::vector<Index>{0}));
}

TEST(DeadCodes, RestartedCodeWaitsForFreshWindow) {
  UsageWindow w(2, 3, 1);
  for (int i = 0; i < 3; ++i) w.push({2, 0});
  const std::vector<Index> dead = detect_dead_codes(w);
  ASSERT_EQ(dead, (std::vector<Index>{1}));
  w.restart(dead);
  w.push({2, 0});
  EXPECT_TRUE(detect_dead_codes(w).empty());
  w.push({2, 0});
  w.push({2, 0});
  EXPECT_EQ(detect_dead_codes(w), (std::vector<Index>{1}));
}

TEST(DeadCodes, LowerThresholdNeverEnlargesSet) {
  oracle::Random rnd(41);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<std::int64_t>> batches(10, std::vector<std::int64_t>(12));
    for (auto& b : batches) {
      for (auto& c : b) c = rnd.integer(0, 1) * rnd.integer(0, 2);
    }
    const auto t = rnd.integer(1, 5);
    const auto high = detect_dead_codes(window_with(12, 10, t, batches));
    const auto low = detect_dead_codes(window_with(12, 10, t - 1, batches));
    EXPECT_TRUE(std::includes(high.begin(), high.end(), low.begin(), low.end()));
  }
}

// Aggregates over a longer window are never below those over a shorter one,
// given the same recent batches.
TEST(DeadCodes, LongerWindowNeverLowersAggregates) {
  oracle::Random rnd(42);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<std::int64_t>> batches(15, std::vector<std::int64_t>(6));
    for (auto& b : batches) {
      for (auto& c : b) c = rnd.integer(0, 3);
    }
    const auto short_len = static_cast<std::size_t>(rnd.integer(1, 9));
    const auto longer = window_with(6, short_len + 1, 2, batches).aggregate();
    const auto shorter = window_with(6, short_len, 2, batches).aggregate();
    for (std::size_t k = 0; k < 6; ++k) EXPECT_GE(longer[k], shorter[k]);
  }
}

TEST(ResetDeadCodes, EmptyDeadSetIsNoOp) {
  oracle::Random rnd(51);
  Codebook cb(rnd.gaussian(5, 3));
  const Matrix before = cb.entries();
  reset_dead_codes(cb, {}, Matrix(0, 3), 1);
  EXPECT_TRUE((cb.entries().array() == before.array()).all());
}

TEST(ResetDeadCodes, ConstantOutputsGiveThatValue) {
  oracle::Random rnd(52);
  Codebook cb(rnd.gaussian(5, 3));
  const Matrix before = cb.entries();
  Matrix recent(20, 3);
  recent.rowwise() = Eigen::RowVector3d(0.5, -2, 7);
  const std::vector<Index> dead = {2};
  reset_dead_codes(cb, dead, recent, 3, ResetOptions{8, 0.0});
  EXPECT_EQ(cb.entries().row(2), Eigen::RowVector3d(0.5, -2, 7));
  EXPECT_EQ(cb.ema_counts()(2), 1.0);
  EXPECT_EQ(cb.ema_sums().row(2), cb.entries().row(2));
  for (Index k : {0, 1, 3, 4}) EXPECT_EQ(cb.entries().row(k), before.row(k));
}

TEST(ResetDeadCodes, RejectsEmptyRecentAndBadIndex) {
  Codebook cb(Matrix::Zero(3, 2));
  const std::vector<Index> dead = {1};
  EXPECT_THROW(reset_dead_codes(cb, dead, Matrix(0, 2), 0), InputError);
  const std::vector<Index> bad = {3};
  EXPECT_THROW(reset_dead_codes(cb, bad, Matrix::Ones(4, 2), 0), ContractViolation);
}

TEST(ResetDeadCodes, ResetCodeWinsAssignmentsAcrossSeeds) {
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    oracle::Random rnd(1000 + seed);
    const Matrix recent = rnd.gaussian(64, 8);
    Matrix codes = Matrix::Zero(16, 8);
    codes.array() += 50.0;  // far away: every code is dead
    codes.row(0) = recent.colwise().mean();
    Codebook cb(codes);
    const std::vector<Index> dead = {5};
    reset_dead_codes(cb, dead, recent, seed);
    ASSERT_TRUE(cb.entries().allFinite());
    const auto counts = count_assignments(nearest_assign(recent, cb).indices, 16);
    if (counts[5] > 0) ++successes;
  }
  EXPECT_GE(successes, 95);
}

TEST(ResetDeadCodes, RaisesPerplexityOnCollapsedCodebook) {
  oracle::Random rnd(53);
  const Matrix batch = rnd.gaussian(256, 4);
  Matrix codes(32, 4);
  codes.rowwise() = batch.colwise().mean();
  Codebook cb(codes);
  UsageWindow w(32, 10, 2);
  for (int i = 0; i < 10; ++i) w.push(count_assignments(nearest_assign(batch, cb).indices, 32));
  const double before = perplexity(UsageStats(count_assignments(nearest_assign(batch, cb).indices, 32)));
  const auto dead = detect_dead_codes(w);
  ASSERT_EQ(dead.size(), 31u);
  reset_dead_codes(cb, dead, batch, 7);
  const double after = perplexity(UsageStats(count_assignments(nearest_assign(batch, cb).indices, 32)));
  EXPECT_DOUBLE_EQ(before, 1.0);
  EXPECT_GE(after, before);
  EXPECT_GT(after, 4.0);
}

TEST(CommitmentLoss, Examples) {
  oracle::Random rnd(61);
  const Matrix z = rnd.gaussian(4, 2);
  EXPECT_EQ(commitment_loss(z, z, 0.25), 0.0);
  EXPECT_EQ(commitment_loss(z, rnd.gaussian(4, 2), 0.0), 0.0);
  const LatentGrid ze(2, 2, Matrix::Ones(4, 2));
  const LatentGrid zq(2, 2, Matrix::Zero(4, 2));
  EXPECT_DOUBLE_EQ(commitment_loss(ze, zq, 0.25), 0.25);
  EXPECT_THROW(commitment_loss(ze, LatentGrid(1, 4, Matrix::Zero(4, 2)), 0.25), ContractViolation);
  EXPECT_THROW(commitment_loss(z, Matrix::Zero(4, 3), 0.25), ContractViolation);
}

TEST(Codebook, RejectsBadConstruction) {
  EXPECT_THROW(Codebook(Matrix(0, 3)), ContractViolation);
  EXPECT_THROW(Codebook(Matrix::Zero(2, 2), 1.0), ContractViolation);
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(Codebook{bad}, InputError);
}

}  // namespace
}  // namespace vqforge
