// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "moelab/imbalance.hpp"
#include "moelab/rng.hpp"

using namespace moelab;

namespace {

std::optional<Imbalance> of(std::vector<std::uint64_t> v) { return layer_imbalance(v); }

}  // namespace

TEST(LayerImbalance, Examples) {
  EXPECT_DOUBLE_EQ(of({10, 10, 10, 10})->factor, 1.0);
  EXPECT_DOUBLE_EQ(of({10, 10, 10, 10})->max_violation, 0.0);
  EXPECT_DOUBLE_EQ(of({40, 0, 0, 0})->factor, 4.0);
  EXPECT_DOUBLE_EQ(of({40, 0, 0, 0})->max_violation, 3.0);
  EXPECT_DOUBLE_EQ(of({3, 1})->factor, 1.5);
  EXPECT_FALSE(of({0, 0, 0}).has_value());
  EXPECT_THROW(of({}), InputError);
}

TEST(LayerImbalance, ScaleAndPermutationInvariant) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(16);
    std::vector<std::uint64_t> v(n);
    for (auto& x : v) x = rng.uniform_below(100);
    v[0] += 1;
    const double i = of(v)->factor;
    EXPECT_GE(i, 1.0);
    EXPECT_LE(i, static_cast<double>(n) + 1e-12);
    auto scaled = v;
    for (auto& x : scaled) x *= 7;
    EXPECT_NEAR(of(scaled)->factor, i, 1e-12);
    std::reverse(v.begin(), v.end());
    EXPECT_NEAR(of(v)->factor, i, 1e-12);
  }
}

TEST(AggregateImbalance, WeightedSum) {
  std::vector<double> per = {1.0, 2.0, 3.0};
  EXPECT_DOUBLE_EQ(aggregate_imbalance(per, LayerWeights::uniform(3)), 2.0);
  EXPECT_DOUBLE_EQ(aggregate_imbalance(per, LayerWeights({0.5, 0.5, 0.0})), 1.5);
  EXPECT_THROW(aggregate_imbalance(per, LayerWeights::uniform(2)), InputError);
}

TEST(AggregateImbalance, SkipsMissingAndRenormalizes) {
  std::vector<std::optional<double>> per = {2.0, std::nullopt, 4.0, std::nullopt};
  EXPECT_DOUBLE_EQ(*aggregate_imbalance(per, LayerWeights({0.25, 0.25, 0.25, 0.25})), 3.0);
  EXPECT_DOUBLE_EQ(*aggregate_imbalance(per, LayerWeights({0.3, 0.1, 0.1, 0.5})), (0.3 * 2 + 0.1 * 4) / 0.4);
  std::vector<std::optional<double>> none(2);
  EXPECT_FALSE(aggregate_imbalance(none, LayerWeights::uniform(2)).has_value());
}

TEST(LayerWeights, Validation) {
  EXPECT_THROW(LayerWeights({0.5, 0.6}), ConfigError);
  EXPECT_THROW(LayerWeights({1.5, -0.5}), ConfigError);
  EXPECT_THROW(LayerWeights::uniform(0), ConfigError);
  std::vector<double> flops = {1.0, 3.0};
  const auto w = LayerWeights::from_flops(flops);
  EXPECT_DOUBLE_EQ(w[0], 0.25);
  EXPECT_DOUBLE_EQ(w[1], 0.75);
  std::vector<double> zeros = {0.0, 0.0};
  EXPECT_THROW(LayerWeights::from_flops(zeros), ConfigError);
}

TEST(PlacementMatrix, Validation) {
  EXPECT_THROW(PlacementMatrix(2, 2, {1.0, 0.0, 0.0, 0.5}), ConfigError);
  EXPECT_THROW(PlacementMatrix(2, 2, {1.0, 0.0}), ConfigError);
  EXPECT_THROW(PlacementMatrix(1, 1, {-1.0}), ConfigError);
  std::vector<std::size_t> map = {0, 2};
  EXPECT_THROW(PlacementMatrix::from_assignment(2, map), ConfigError);
  EXPECT_NO_THROW(PlacementMatrix(2, 2, {0.5, 0.0, 0.5, 1.0}));
}

TEST(GpuLoads, IdentityMatchesExpertLoads) {
  AssignmentCounts c(2, 3);
  c.at(0, 0) = 5;
  c.at(0, 2) = 1;
  c.at(1, 1) = 4;
  const auto loads = gpu_loads(c, PlacementMatrix::identity(3));
  EXPECT_EQ(loads, (std::vector<double>{5, 0, 1, 0, 4, 0}));
  const auto rep = imbalance_report(c, LayerWeights::uniform(2), nullptr);
  const auto id = PlacementMatrix::identity(3);
  const auto rep_id = imbalance_report(c, LayerWeights::uniform(2), &id);
  EXPECT_DOUBLE_EQ(*rep.I_agg, *rep_id.gpu_I_agg);
}

TEST(GpuLoads, PairedExpertsBalanceOnTwoGpus) {
  // Experts {0,1} on GPU 0 and {2,3} on GPU 1.
  std::vector<std::size_t> map = {0, 0, 1, 1};
  const auto a = PlacementMatrix::from_assignment(2, map);
  AssignmentCounts c(1, 4);
  c.at(0, 0) = 30;
  c.at(0, 1) = 10;
  c.at(0, 2) = 20;
  c.at(0, 3) = 20;
  const auto rep = imbalance_report(c, LayerWeights::uniform(1), &a);
  EXPECT_DOUBLE_EQ(rep.per_layer[0]->factor, 1.5);
  EXPECT_DOUBLE_EQ(rep.gpu_per_layer[0]->factor, 1.0);
}

TEST(GpuLoads, MatchesNaiveMatvec) {
  Rng rng(32);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(10), G = 1 + rng.uniform_below(5), L = 1 + rng.uniform_below(4);
    std::vector<double> a(G * n);
    for (std::size_t e = 0; e < n; ++e) {
      double col = 0;
      for (std::size_t g = 0; g < G; ++g) col += a[g * n + e] = rng.uniform01();
      for (std::size_t g = 0; g < G; ++g) a[g * n + e] /= col;
    }
    PlacementMatrix pm(G, n, a);
    AssignmentCounts c(L, n);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t e = 0; e < n; ++e) c.at(l, e) = rng.uniform_below(50);
    const auto got = gpu_loads(c, pm);
    for (std::size_t l = 0; l < L; ++l) {
      double expert_total = 0, gpu_total = 0;
      for (std::size_t e = 0; e < n; ++e) expert_total += static_cast<double>(c.at(l, e));
      for (std::size_t g = 0; g < G; ++g) {
        double want = 0;
        for (std::size_t e = 0; e < n; ++e) want += a[g * n + e] * static_cast<double>(c.at(l, e));
        EXPECT_NEAR(got[l * G + g], want, 1e-9);
        gpu_total += got[l * G + g];
      }
      EXPECT_NEAR(gpu_total, expert_total, 1e-9);  // column sums of 1 preserve token mass
    }
  }
}

TEST(ImbalanceReport, ZeroLayerSkipped) {
  AssignmentCounts c(3, 2);
  c.at(0, 0) = 4;
  c.at(2, 0) = 1;
  c.at(2, 1) = 1;
  const auto r = imbalance_report(c, LayerWeights::uniform(3));
  EXPECT_EQ(r.skipped_layers, 1u);
  EXPECT_FALSE(r.per_layer[1].has_value());
  EXPECT_DOUBLE_EQ(*r.I_agg, 1.5);
}

TEST(AssignmentCounts, AddAndShape) {
  AssignmentCounts a(2, 2), b(2, 2);
  a.at(0, 1) = 2;
  b.at(0, 1) = 3;
  a += b;
  EXPECT_EQ(a.at(0, 1), 5u);
  AssignmentCounts bad(1, 2);
  EXPECT_THROW(a += bad, InputError);
}

TEST(SummarizeBatches, NearestRankMatchesSortOracle) {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t N = 1 + rng.uniform_below(200);
    std::vector<double> v(N);
    for (auto& x : v) x = 1.0 + rng.uniform01();
    const auto s = summarize_batches(v);
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    // Rank ceil(p*N) by integer arithmetic.
    EXPECT_EQ(s.p50_Iagg, sorted[(50 * N + 99) / 100 - 1]);
    EXPECT_EQ(s.p95_Iagg, sorted[(95 * N + 99) / 100 - 1]);
    double sum = 0;
    for (double x : v) sum += x;
    EXPECT_NEAR(s.mean_Iagg, sum / static_cast<double>(N), 1e-12);
    EXPECT_EQ(s.batch_count, N);
  }
  std::vector<double> none;
  EXPECT_THROW(summarize_batches(none), InputError);
}
