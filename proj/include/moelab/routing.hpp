// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "moelab/error.hpp"
#include "moelab/gate_scores.hpp"
#include "moelab/rng.hpp"

namespace moelab {

// Per-expert running token counts within one layer.
class LoadVector {
 public:
  LoadVector() = default;
  explicit LoadVector(std::size_t num_experts) : loads_(num_experts, 0) {}
  explicit LoadVector(std::vector<std::uint64_t> loads) : loads_(std::move(loads)) {}
  LoadVector(std::initializer_list<std::uint64_t> loads) : loads_(loads) {}

  std::size_t size() const noexcept { return loads_.size(); }
  std::uint64_t operator[](std::size_t e) const { return loads_[e]; }
  std::span<const std::uint64_t> values() const noexcept { return loads_; }
  std::uint64_t total() const { return std::accumulate(loads_.begin(), loads_.end(), std::uint64_t{0}); }

  void increment(std::size_t e) { ++loads_.at(e); }
  void reset() { std::fill(loads_.begin(), loads_.end(), 0); }

  friend bool operator==(const LoadVector&, const LoadVector&) = default;

 private:
  std::vector<std::uint64_t> loads_;
};

enum class TrimMode { Top, Random };

enum class RoutePath {
  SkewedTopK,  // score-only top-k (vanilla, or LASER's dominance path)
  Expanded,    // LASER built a candidate pool and ranked it by load
  LoadOnly,    // load-only baseline
};

inline std::string_view to_string(RoutePath p) {
  switch (p) {
    case RoutePath::SkewedTopK: return "topk";
    case RoutePath::Expanded: return "expanded";
    case RoutePath::LoadOnly: return "load_only";
  }
  return "?";
}

inline std::string_view to_string(TrimMode m) { return m == TrimMode::Top ? "top" : "random"; }

struct LaserParams {
  std::size_t k = 2;
  double eps_high = 0.75;  // dominance cutoff on top-k mass
  double t_fix = 0.6;      // pool cutoff as a fraction of the max score
  std::size_t c = 2;       // working-set cap
  TrimMode trim = TrimMode::Top;
  std::uint64_t rng_seed = 1;

  // eps_high is accepted in (0, 1]; 1 forces expansion on every token whose
  // top-k mass is below 1.
  void validate(std::size_t num_experts) const {
    if (k < 1 || k > num_experts)
      throw ParameterError("k=" + std::to_string(k) + " outside [1, " + std::to_string(num_experts) + "]");
    if (c < k || c > num_experts)
      throw ParameterError("c=" + std::to_string(c) + " outside [k, n] = [" + std::to_string(k) + ", " +
                           std::to_string(num_experts) + "]");
    if (!(eps_high > 0.0 && eps_high <= 1.0)) throw ParameterError("eps_high must be in (0, 1]");
    if (!(t_fix > 0.0 && t_fix <= 1.0)) throw ParameterError("t_fix must be in (0, 1]");
  }

  friend bool operator==(const LaserParams&, const LaserParams&) = default;
};

// Inclusive layer index range.
struct LayerRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
  bool contains(std::size_t layer) const noexcept { return layer >= lo && layer <= hi; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

struct Band {
  LayerRange layers;
  LaserParams params;
};

// Layer-banded LASER parameters. Bands must be disjoint and contiguous and
// cover [0, num_layers - 1]; validate() enforces this.
struct BandParams {
  std::vector<Band> bands;

  void validate(std::size_t num_layers, std::size_t num_experts) const {
    if (num_layers == 0) throw ConfigError("no layers to cover");
    std::vector<const Band*> sorted;
    for (const auto& b : bands) {
      if (b.layers.lo > b.layers.hi)
        throw ConfigError("band [" + std::to_string(b.layers.lo) + ".." + std::to_string(b.layers.hi) +
                          "] has lo > hi");
      sorted.push_back(&b);
    }
    std::sort(sorted.begin(), sorted.end(),
              [](const Band* a, const Band* b) { return a->layers.lo < b->layers.lo; });
    std::size_t next = 0;
    for (const Band* b : sorted) {
      if (b->layers.lo > next)
        throw ConfigError("uncovered layers [" + std::to_string(next) + ".." + std::to_string(b->layers.lo - 1) +
                          "]");
      if (b->layers.lo < next)
        throw ConfigError("overlapping bands at layer " + std::to_string(b->layers.lo));
      try {
        b->params.validate(num_experts);
      } catch (const ParameterError& e) {
        throw ConfigError("band [" + std::to_string(b->layers.lo) + ".." + std::to_string(b->layers.hi) +
                          "]: " + e.what());
      }
      next = b->layers.hi + 1;
    }
    if (next < num_layers)
      throw ConfigError("uncovered layers [" + std::to_string(next) + ".." + std::to_string(num_layers - 1) + "]");
    if (next > num_layers)
      throw ConfigError("bands cover layer " + std::to_string(next - 1) + " beyond last layer " +
                        std::to_string(num_layers - 1));
  }
};

/// Params of the unique band containing `layer`.
inline const LaserParams& resolve_band(const BandParams& bp, std::size_t layer) {
  for (const auto& b : bp.bands)
    if (b.layers.contains(layer)) return b.params;
  throw ConfigError("layer " + std::to_string(layer) + " is not covered by any band");
}

struct RoutingDecision {
  std::vector<std::size_t> selected;  // k distinct experts, in selection order
  RoutePath path = RoutePath::SkewedTopK;
  std::size_t pool_size = 0;          // m; 0 unless Expanded
  std::size_t working_set_size = 0;   // c*; 0 unless Expanded

  std::vector<std::size_t> selected_set() const {
    auto s = selected;
    std::sort(s.begin(), s.end());
    return s;
  }
};

inline void check_k(std::size_t k, std::size_t n) {
  if (k < 1 || k > n)
    throw ParameterError("k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
}

/// Standard top-k: the k highest scores, ties by ascending index.
inline RoutingDecision route_vanilla_topk(const GateScores& s, std::size_t k) {
  check_k(k, s.size());
  return RoutingDecision{top_k_indices(s, k), RoutePath::SkewedTopK, 0, 0};
}

/// Load-only baseline: the k least-loaded experts, ties by ascending index.
inline RoutingDecision route_load_only(const LoadVector& loads, std::size_t k) {
  check_k(k, loads.size());
  std::vector<std::size_t> idx(loads.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return loads[a] < loads[b]; });
  idx.resize(k);
  return RoutingDecision{std::move(idx), RoutePath::LoadOnly, 0, 0};
}

/// LASER routing for one token in one layer.
///
/// Steps:
///   1. M_k >= eps_high            -> plain top-k (dominance path).
///   2. t = t_fix * s_(1).
///   3. pool T = {i : s_i >= t} U top-k, m = |T|.
///   4. c* = min(c, m); trim T to c* members (highest scores, or a uniform
///      sample without replacement drawn from `rng`).
///   5. order by (load asc, score desc, index asc), return the first k.
///
/// Random trimming draws a Fisher-Yates prefix over T listed in ascending
/// index order, consuming exactly c* draws from `rng`.
inline RoutingDecision route_laser(const GateScores& s, const LoadVector& loads, const LaserParams& p, Rng& rng) {
  const std::size_t n = s.size();
  if (loads.size() != n)
    throw InputError("score vector has " + std::to_string(n) + " experts but load vector has " +
                     std::to_string(loads.size()));
  p.validate(n);
  const std::size_t k = p.k;

  auto ranked = rank_by_score(s.values());
  if (k == n) return RoutingDecision{std::move(ranked), RoutePath::SkewedTopK, 0, 0};

  double mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) mass += s[ranked[i]];
  if (mass >= p.eps_high) {
    ranked.resize(k);
    return RoutingDecision{std::move(ranked), RoutePath::SkewedTopK, 0, 0};
  }

  const double cutoff = p.t_fix * s[ranked[0]];
  std::vector<bool> in_topk(n, false);
  for (std::size_t i = 0; i < k; ++i) in_topk[ranked[i]] = true;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (s[i] >= cutoff || in_topk[i]) pool.push_back(i);

  const std::size_t m = pool.size();
  const std::size_t c_star = std::min(p.c, m);

  std::vector<std::size_t> cand;
  if (p.trim == TrimMode::Top) {
    // `ranked` already orders by (score desc, index asc); keep pool members.
    for (std::size_t i : ranked) {
      if (cand.size() == c_star) break;
      if (s[i] >= cutoff || in_topk[i]) cand.push_back(i);
    }
  } else {
    for (std::size_t i = 0; i < c_star; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_below(m - i));
      std::swap(pool[i], pool[j]);
    }
    cand.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(c_star));
  }

  std::sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) {
    if (loads[a] != loads[b]) return loads[a] < loads[b];
    if (s[a] != s[b]) return s[a] > s[b];
    return a < b;
  });
  cand.resize(k);
  return RoutingDecision{std::move(cand), RoutePath::Expanded, m, c_star};
}

/// Convenience overload: a fresh generator seeded from p.rng_seed.
inline RoutingDecision route_laser(const GateScores& s, const LoadVector& loads, const LaserParams& p) {
  Rng rng(p.rng_seed);
  return route_laser(s, loads, p, rng);
}

/// Each selected expert's load +1.
inline LoadVector update_loads(LoadVector loads, const RoutingDecision& d) {
  for (std::size_t e : d.selected) loads.increment(e);
  return loads;
}

inline void apply_decision(LoadVector& loads, const RoutingDecision& d) {
  for (std::size_t e : d.selected) loads.increment(e);
}

}  // namespace moelab
