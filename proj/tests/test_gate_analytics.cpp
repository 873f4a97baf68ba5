// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>
#include <vector>

#include "moelab/gate_analytics.hpp"
#include "moelab/synthetic.hpp"
#include "test_support.hpp"

using namespace moelab;

namespace {

GateScores uniform(std::size_t n) { return GateScores(std::vector<double>(n, 1.0 / static_cast<double>(n))); }

}  // namespace

TEST(GateScores, RejectsInvalidVectors) {
  EXPECT_THROW(GateScores(std::vector<double>{}), InputError);
  EXPECT_THROW(GateScores({0.0, 0.0}), InputError);
  EXPECT_THROW(GateScores({0.5, -0.1, 0.6}), InputError);
  EXPECT_THROW(GateScores({0.5, NAN, 0.5}), InputError);
  EXPECT_THROW(GateScores({0.5, INFINITY}), InputError);
  EXPECT_THROW(GateScores({0.5, 0.49}), InputError);  // off by 1e-2
}

TEST(GateScores, RenormalizesSmallDriftOnly) {
  GateScores kept({0.5, 0.5 + 5e-7});
  EXPECT_EQ(kept[1], 0.5 + 5e-7);
  GateScores fixed({0.5, 0.5005});
  EXPECT_NEAR(fixed[0] + fixed[1], 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(fixed[0], 0.5 / 1.0005);
}

TEST(TopKMass, Examples) {
  EXPECT_DOUBLE_EQ(top_k_mass(GateScores({0.5, 0.3, 0.1, 0.1}), 2), 0.8);
  EXPECT_DOUBLE_EQ(top_k_mass(uniform(8), 2), 0.25);
  EXPECT_DOUBLE_EQ(top_k_mass(GateScores({0.05, 0.95}), 1), 0.95);
}

TEST(TopKMass, KOutOfRange) {
  EXPECT_THROW(top_k_mass(uniform(4), 0), ParameterError);
  EXPECT_THROW(top_k_mass(uniform(4), 5), ParameterError);
}

TEST(TopKMass, BoundsAndMonotoneInK) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(12);
    GateScores s(testkit::random_scores(rng, n));
    double prev = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      const double m = top_k_mass(s, k);
      EXPECT_GE(m, static_cast<double>(k) / static_cast<double>(n) - 1e-12);
      EXPECT_LE(m, 1.0 + 1e-12);
      EXPECT_GE(m, prev);
      prev = m;
    }
  }
}

TEST(Entropy, Examples) {
  EXPECT_NEAR(entropy(uniform(8)), std::log(8.0), 1e-12);
  EXPECT_EQ(entropy(GateScores({0.0, 1.0, 0.0})), 0.0);
  EXPECT_NEAR(entropy(GateScores({0.5, 0.5, 0.0, 0.0})), std::log(2.0), 1e-12);
  EXPECT_NEAR(normalized_entropy(uniform(8)), 1.0, 1e-12);
}

TEST(Entropy, PermutationInvariantAndBounded) {
  Rng rng(12);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(10);
    auto v = testkit::random_scores(rng, n);
    const double h = entropy(GateScores(v));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(n)) + 1e-12);
    for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.uniform_below(i)]);
    EXPECT_NEAR(entropy(GateScores(v)), h, 1e-12);
  }
}

TEST(ClassifyRegime, Examples) {
  const RegimeParams rp{0.6, 0.8};
  EXPECT_EQ(classify_regime(GateScores({0.9, 0.05, 0.05}), rp), RegimeLabel::SingleHead);
  EXPECT_EQ(classify_regime(GateScores({0.4, 0.38, 0.22}), rp), RegimeLabel::Plateau);
  EXPECT_EQ(classify_regime(GateScores({0.4, 0.2, 0.2, 0.2}), rp), RegimeLabel::Smooth);
  EXPECT_EQ(classify_regime(GateScores({1.0}), rp), RegimeLabel::SingleHead);
}

TEST(ClassifyRegime, InvalidThresholds) {
  EXPECT_THROW(classify_regime(uniform(3), {0.0, 0.8}), ParameterError);
  EXPECT_THROW(classify_regime(uniform(3), {1.0, 0.8}), ParameterError);
  EXPECT_THROW(classify_regime(uniform(3), {0.6, 1.5}), ParameterError);
}

TEST(ClassifyRegime, ScaleInvariant) {
  Rng rng(13);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + rng.uniform_below(8);
    auto v = testkit::random_scores(rng, n);
    const auto label = classify_regime(GateScores(v));
    const double scale = 0.5 + rng.uniform01() * 4.0;
    std::vector<double> w;
    double sum = 0.0;
    for (double x : v) sum += x * scale;
    for (double x : v) w.push_back(x * scale / sum);
    // A value landing exactly on a threshold can flip under rounding.
    auto sorted = v;
    std::sort(sorted.rbegin(), sorted.rend());
    if (std::abs(sorted[0] - 0.6) < 1e-9 || std::abs(sorted[1] / sorted[0] - 0.8) < 1e-9) continue;
    EXPECT_EQ(classify_regime(GateScores(w)), label);
  }
}

TEST(AggregateLayerStats, Examples) {
  std::vector<std::pair<std::size_t, GateScores>> stream = {
      {0, GateScores({0.5, 0.3, 0.1, 0.1})},  // M_2 = 0.8
      {0, GateScores({0.3, 0.3, 0.2, 0.2})},  // M_2 = 0.6
  };
  auto stats = aggregate_layer_stats(stream, 2);
  ASSERT_EQ(stats.size(), 1u);
  EXPECT_NEAR(stats[0].mean_Mk, 0.7, 1e-12);
  EXPECT_EQ(stats[0].token_count, 2u);

  std::vector<std::pair<std::size_t, GateScores>> onehot = {{3, GateScores({0.0, 1.0, 0.0})},
                                                            {3, GateScores({1.0, 0.0, 0.0})}};
  stats = aggregate_layer_stats(onehot, 1);
  ASSERT_EQ(stats.size(), 1u);
  EXPECT_EQ(stats[0].layer_index, 3u);
  EXPECT_EQ(stats[0].entropy_p50, 0.0);
  EXPECT_EQ(stats[0].regime_fractions, (std::array<double, 3>{1.0, 0.0, 0.0}));

  std::vector<std::pair<std::size_t, GateScores>> empty;
  EXPECT_TRUE(aggregate_layer_stats(empty, 2).empty());
}

TEST(AggregateLayerStats, FractionsMatchIndependentRecount) {
  Rng rng(14);
  std::vector<std::pair<std::size_t, GateScores>> stream;
  GeneratorSpec gen{DirichletGen{0.7}, 0.0};
  for (int i = 0; i < 1000; ++i) stream.emplace_back(i % 3, GateScores(sample_scores(rng, 6, gen)));
  const auto stats = aggregate_layer_stats(stream, 2);
  ASSERT_EQ(stats.size(), 3u);

  // Second pass: direct recount with explicit thresholds, no classify_regime.
  for (const auto& st : stats) {
    std::array<double, 3> count{};
    double n = 0, mk = 0;
    std::vector<double> h;
    for (const auto& [layer, s] : stream) {
      if (layer != st.layer_index) continue;
      std::vector<double> v(s.values().begin(), s.values().end());
      std::sort(v.rbegin(), v.rend());
      if (v[0] >= 0.6) count[0] += 1;
      else if (v[1] / v[0] >= 0.8) count[1] += 1;
      else count[2] += 1;
      mk += v[0] + v[1];
      double e = 0;
      for (double x : v)
        if (x > 0) e -= x * std::log(x);
      h.push_back(e);
      n += 1;
    }
    std::sort(h.begin(), h.end());
    EXPECT_NEAR(st.regime_fractions[0] + st.regime_fractions[1] + st.regime_fractions[2], 1.0, 1e-9);
    for (int r = 0; r < 3; ++r) EXPECT_DOUBLE_EQ(st.regime_fractions[r], count[r] / n);
    EXPECT_NEAR(st.mean_Mk, mk / n, 1e-12);
    EXPECT_NEAR(st.entropy_p50, h[static_cast<std::size_t>(std::ceil(0.5 * n)) - 1], 1e-12);
    EXPECT_NEAR(st.entropy_p25, h[static_cast<std::size_t>(std::ceil(0.25 * n)) - 1], 1e-12);
    EXPECT_NEAR(st.entropy_p75, h[static_cast<std::size_t>(std::ceil(0.75 * n)) - 1], 1e-12);
  }
}

TEST(AggregateLayerStats, MergeEqualsConcatenation) {
  Rng rng(15);
  GeneratorSpec gen{DirichletGen{1.0}, 0.0};
  std::vector<std::pair<std::size_t, GateScores>> a, b, ab;
  for (int i = 0; i < 300; ++i) a.emplace_back(i % 4, GateScores(sample_scores(rng, 8, gen)));
  for (int i = 0; i < 500; ++i) b.emplace_back(i % 4, GateScores(sample_scores(rng, 8, gen)));
  ab = a;
  ab.insert(ab.end(), b.begin(), b.end());

  LayerStatsAccumulator acc_a(2), acc_b(2);
  for (const auto& [l, s] : a) acc_a.add(l, s);
  for (const auto& [l, s] : b) acc_b.add(l, s);
  acc_a.merge(acc_b);
  const auto merged = acc_a.finish();
  const auto direct = aggregate_layer_stats(ab, 2);
  const auto sa = aggregate_layer_stats(a, 2);
  const auto sb = aggregate_layer_stats(b, 2);
  ASSERT_EQ(merged.size(), direct.size());
  for (std::size_t i = 0; i < merged.size(); ++i) {
    const double weighted = (sa[i].mean_Mk * sa[i].token_count + sb[i].mean_Mk * sb[i].token_count) /
                            static_cast<double>(sa[i].token_count + sb[i].token_count);
    EXPECT_NEAR(merged[i].mean_Mk, weighted, 1e-12);
    EXPECT_NEAR(merged[i].mean_Mk, direct[i].mean_Mk, 1e-12);
    EXPECT_EQ(merged[i].entropy_p25, direct[i].entropy_p25);
    EXPECT_EQ(merged[i].entropy_p50, direct[i].entropy_p50);
    EXPECT_EQ(merged[i].entropy_p75, direct[i].entropy_p75);
    EXPECT_EQ(merged[i].regime_fractions, direct[i].regime_fractions);
    EXPECT_EQ(merged[i].token_count, sa[i].token_count + sb[i].token_count);
  }
}

TEST(LayerStatsCsv, FixedColumns) {
  std::vector<std::pair<std::size_t, GateScores>> s = {{0, GateScores({0.5, 0.5})}};
  std::ostringstream os;
  write_layer_stats_csv(os, aggregate_layer_stats(s, 1));
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "layer,mean_Mk,entropy_p25,entropy_p50,entropy_p75,frac_single_head,frac_plateau,frac_smooth,tokens");
}

namespace {

std::vector<LayerStats> flat_stats(const std::vector<double>& mk) {
  std::vector<LayerStats> out;
  for (std::size_t l = 0; l < mk.size(); ++l) {
    LayerStats s;
    s.layer_index = l;
    s.mean_Mk = mk[l];
    s.token_count = 1;
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(SuggestParameters, ConstantMass) {
  const auto stats = flat_stats(std::vector<double>(12, 0.95));
  const auto bp = suggest_parameters(stats, thirds(12), 0.5, LaserParams{});
  ASSERT_EQ(bp.bands.size(), 3u);
  for (const auto& b : bp.bands) {
    EXPECT_DOUBLE_EQ(b.params.eps_high, 0.95);
    EXPECT_DOUBLE_EQ(b.params.t_fix, 0.6);
  }
  bp.validate(12, 8);
}

TEST(SuggestParameters, UniformLayers) {
  const auto stats = flat_stats(std::vector<double>(9, 0.25));
  const auto bp = suggest_parameters(stats, thirds(9), 0.3, LaserParams{});
  for (const auto& b : bp.bands) EXPECT_DOUBLE_EQ(b.params.eps_high, 0.25);
}

TEST(SuggestParameters, TwoBandQuantilesMatchSortOracle) {
  Rng rng(16);
  std::vector<double> mk;
  for (int l = 0; l < 10; ++l) mk.push_back(0.85 + 0.1 * rng.uniform01());
  for (int l = 0; l < 14; ++l) mk.push_back(0.35 + 0.1 * rng.uniform01());
  const auto stats = flat_stats(mk);
  const LayerBands bands = {{0, 9}, {10, 23}};
  for (double rate : {0.1, 0.25, 0.5, 0.9}) {
    const auto bp = suggest_parameters(stats, bands, rate, LaserParams{});
    for (std::size_t bi = 0; bi < 2; ++bi) {
      std::vector<double> v(mk.begin() + bands[bi].lo, mk.begin() + bands[bi].hi + 1);
      std::sort(v.begin(), v.end());
      // Smallest sample with at least `rate` of the band at or below it.
      std::size_t idx = 0;
      while (static_cast<double>(idx + 1) < rate * static_cast<double>(v.size()) - 1e-9) ++idx;
      EXPECT_DOUBLE_EQ(bp.bands[bi].params.eps_high, v[idx]) << "rate " << rate << " band " << bi;
    }
    EXPECT_GT(bp.bands[0].params.eps_high, 0.8);
    EXPECT_LT(bp.bands[1].params.eps_high, 0.5);
  }
}

TEST(SuggestParameters, Errors) {
  const auto stats = flat_stats({0.5, 0.5});
  EXPECT_THROW(suggest_parameters(stats, {{5, 7}}, 0.5, LaserParams{}), ConfigError);
  EXPECT_THROW(suggest_parameters(stats, {{0, 1}}, 0.0, LaserParams{}), ParameterError);
  EXPECT_THROW(suggest_parameters(stats, {{0, 1}}, 1.0, LaserParams{}), ParameterError);
}

TEST(Thirds, Split) {
  EXPECT_EQ(thirds(32), (LayerBands{{0, 9}, {10, 21}, {22, 31}}));
  EXPECT_EQ(thirds(3), (LayerBands{{0, 0}, {1, 1}, {2, 2}}));
  EXPECT_EQ(thirds(2), (LayerBands{{0, 1}}));
  EXPECT_EQ(thirds(1), (LayerBands{{0, 0}}));
}
