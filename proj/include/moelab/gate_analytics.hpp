// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "moelab/error.hpp"
#include "moelab/gate_scores.hpp"
#include "moelab/routing.hpp"
#include "moelab/stats.hpp"

namespace moelab {

enum class RegimeLabel { SingleHead = 0, Plateau = 1, Smooth = 2 };

inline std::string_view to_string(RegimeLabel r) {
  switch (r) {
    case RegimeLabel::SingleHead: return "single_head";
    case RegimeLabel::Plateau: return "plateau";
    case RegimeLabel::Smooth: return "smooth";
  }
  return "?";
}

struct RegimeParams {
  double tau_dom = 0.6;      // s_(1) at or above this is single-head
  double tau_plateau = 0.8;  // s_(2)/s_(1) at or above this is plateau

  void validate() const {
    if (!(tau_dom > 0.0 && tau_dom < 1.0)) throw ParameterError("tau_dom must be in (0, 1)");
    if (!(tau_plateau > 0.0 && tau_plateau <= 1.0)) throw ParameterError("tau_plateau must be in (0, 1]");
  }
};

inline RegimeLabel classify_regime(const GateScores& s, const RegimeParams& rp = {}) {
  rp.validate();
  if (s.size() < 2) return RegimeLabel::SingleHead;
  double first = -1.0, second = -1.0;
  for (double v : s.values()) {
    if (v > first) {
      second = first;
      first = v;
    } else if (v > second) {
      second = v;
    }
  }
  if (first >= rp.tau_dom) return RegimeLabel::SingleHead;
  if (second / first >= rp.tau_plateau) return RegimeLabel::Plateau;
  return RegimeLabel::Smooth;
}

struct LayerStats {
  std::size_t layer_index = 0;
  double mean_Mk = 0.0;
  double entropy_p25 = 0.0;
  double entropy_p50 = 0.0;
  double entropy_p75 = 0.0;
  std::array<double, 3> regime_fractions{};  // single-head, plateau, smooth
  std::size_t token_count = 0;
};

// Running per-layer statistics. Merging two accumulators is associative and
// commutative up to floating-point summation order of the M_k total.
class LayerStatsAccumulator {
 public:
  LayerStatsAccumulator(std::size_t k, RegimeParams rp = {}) : k_(k), rp_(rp) { rp_.validate(); }

  void add(std::size_t layer, const GateScores& s) {
    auto& acc = layers_[layer];
    acc.mk_sum += top_k_mass(s, k_);
    acc.entropies.push_back(entropy(s));
    ++acc.regimes[static_cast<std::size_t>(classify_regime(s, rp_))];
  }

  void merge(const LayerStatsAccumulator& other) {
    for (const auto& [layer, o] : other.layers_) {
      auto& acc = layers_[layer];
      acc.mk_sum += o.mk_sum;
      acc.entropies.insert(acc.entropies.end(), o.entropies.begin(), o.entropies.end());
      for (std::size_t r = 0; r < 3; ++r) acc.regimes[r] += o.regimes[r];
    }
  }

  std::vector<LayerStats> finish() const {
    std::vector<LayerStats> out;
    for (const auto& [layer, acc] : layers_) {
      const std::size_t count = acc.entropies.size();
      if (count == 0) continue;
      auto sorted = acc.entropies;
      std::sort(sorted.begin(), sorted.end());
      LayerStats st;
      st.layer_index = layer;
      st.token_count = count;
      st.mean_Mk = acc.mk_sum / static_cast<double>(count);
      st.entropy_p25 = nearest_rank_sorted(sorted, 25.0);
      st.entropy_p50 = nearest_rank_sorted(sorted, 50.0);
      st.entropy_p75 = nearest_rank_sorted(sorted, 75.0);
      for (std::size_t r = 0; r < 3; ++r)
        st.regime_fractions[r] = static_cast<double>(acc.regimes[r]) / static_cast<double>(count);
      out.push_back(st);
    }
    return out;
  }

 private:
  struct Acc {
    double mk_sum = 0.0;
    std::vector<double> entropies;
    std::array<std::size_t, 3> regimes{};
  };
  std::size_t k_;
  RegimeParams rp_;
  std::map<std::size_t, Acc> layers_;
};

/// Per-layer M_k mean, entropy quartiles and regime mix, ordered by layer.
template <typename Range>
std::vector<LayerStats> aggregate_layer_stats(const Range& tokens, std::size_t k, const RegimeParams& rp = {}) {
  LayerStatsAccumulator acc(k, rp);
  for (const auto& [layer, scores] : tokens) acc.add(layer, scores);
  return acc.finish();
}

inline void write_layer_stats_csv(std::ostream& os, const std::vector<LayerStats>& stats) {
  os << "layer,mean_Mk,entropy_p25,entropy_p50,entropy_p75,frac_single_head,frac_plateau,frac_smooth,tokens\n";
  auto old = os.precision(17);
  for (const auto& st : stats)
    os << st.layer_index << ',' << st.mean_Mk << ',' << st.entropy_p25 << ',' << st.entropy_p50 << ','
       << st.entropy_p75 << ',' << st.regime_fractions[0] << ',' << st.regime_fractions[1] << ','
       << st.regime_fractions[2] << ',' << st.token_count << '\n';
  os.precision(old);
}

/// Layer ranges to calibrate independently, e.g. early/middle/final.
using LayerBands = std::vector<LayerRange>;

/// Default early/middle/final split: first and last floor(L/3) layers,
/// middle takes the remainder. Empty bands are dropped.
inline LayerBands thirds(std::size_t num_layers) {
  LayerBands bands;
  const std::size_t edge = num_layers / 3;
  if (edge > 0) bands.push_back({0, edge - 1});
  if (num_layers > 2 * edge) bands.push_back({edge, num_layers - edge - 1});
  if (edge > 0) bands.push_back({num_layers - edge, num_layers - 1});
  return bands;
}

/// Mechanical calibration from prefill statistics.
///
/// For each band, eps_high is the nearest-rank quantile of the per-layer
/// mean M_k values at level `target_expansion_rate`, so that roughly that
/// fraction of the band's layers sit below the cutoff and expand. Clamped
/// into (0, 1). t_fix is `default_t_fix`; k, c, trim and seed come from
/// `base`.
inline BandParams suggest_parameters(const std::vector<LayerStats>& prefill_stats, const LayerBands& bands,
                                     double target_expansion_rate, const LaserParams& base,
                                     double default_t_fix = 0.6) {
  if (!(target_expansion_rate > 0.0 && target_expansion_rate < 1.0))
    throw ParameterError("target expansion rate must be in (0, 1)");
  BandParams out;
  for (const auto& range : bands) {
    std::vector<double> mk;
    for (const auto& st : prefill_stats)
      if (range.contains(st.layer_index)) mk.push_back(st.mean_Mk);
    if (mk.empty())
      throw ConfigError("band [" + std::to_string(range.lo) + ".." + std::to_string(range.hi) +
                        "] has no layer statistics");
    LaserParams p = base;
    p.eps_high = std::clamp(nearest_rank(mk, target_expansion_rate * 100.0), 1e-6, 1.0 - 1e-6);
    p.t_fix = default_t_fix;
    out.bands.push_back({range, p});
  }
  return out;
}

}  // namespace moelab
