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
#include <vector>

#include "moelab/error.hpp"
#include "moelab/stats.hpp"

namespace moelab {

// Tokens per expert per layer for one batch, row-major [layers x experts].
class AssignmentCounts {
 public:
  AssignmentCounts() = default;
  AssignmentCounts(std::size_t num_layers, std::size_t num_experts)
      : layers_(num_layers), experts_(num_experts), data_(num_layers * num_experts, 0) {}

  std::size_t num_layers() const noexcept { return layers_; }
  std::size_t num_experts() const noexcept { return experts_; }

  std::uint64_t& at(std::size_t layer, std::size_t expert) { return data_.at(layer * experts_ + expert); }
  std::uint64_t at(std::size_t layer, std::size_t expert) const { return data_.at(layer * experts_ + expert); }

  std::span<const std::uint64_t> row(std::size_t layer) const {
    return std::span<const std::uint64_t>(data_).subspan(layer * experts_, experts_);
  }
  std::span<std::uint64_t> row(std::size_t layer) {
    return std::span<std::uint64_t>(data_).subspan(layer * experts_, experts_);
  }

  AssignmentCounts& operator+=(const AssignmentCounts& o) {
    if (o.layers_ != layers_ || o.experts_ != experts_) throw InputError("count matrix shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  friend bool operator==(const AssignmentCounts&, const AssignmentCounts&) = default;

 private:
  std::size_t layers_ = 0;
  std::size_t experts_ = 0;
  std::vector<std::uint64_t> data_;
};

struct Imbalance {
  double factor = 1.0;         // I = max / mean
  double max_violation = 0.0;  // MV = I - 1
};

/// I and MV of one load row; nullopt when the row total is zero.
template <typename T>
std::optional<Imbalance> imbalance_of(std::span<const T> row) {
  if (row.empty()) throw InputError("imbalance of an empty load row");
  double total = 0.0, peak = 0.0;
  for (T v : row) {
    const auto d = static_cast<double>(v);
    if (!(d >= 0.0)) throw InputError("negative or non-finite load");
    total += d;
    peak = std::max(peak, d);
  }
  if (total <= 0.0) return std::nullopt;
  const double factor = peak * static_cast<double>(row.size()) / total;
  return Imbalance{factor, factor - 1.0};
}

inline std::optional<Imbalance> layer_imbalance(std::span<const std::uint64_t> counts) {
  return imbalance_of(counts);
}

inline std::optional<Imbalance> gpu_imbalance(std::span<const double> gpu_load_row) {
  return imbalance_of(gpu_load_row);
}

// Nonnegative layer weights summing to 1.
class LayerWeights {
 public:
  explicit LayerWeights(std::vector<double> w) : w_(std::move(w)) {
    double sum = 0.0;
    for (double v : w_) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("layer weights must be finite and nonnegative");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("layer weights sum to " + std::to_string(sum) + ", not 1");
  }

  static LayerWeights uniform(std::size_t num_layers) {
    if (num_layers == 0) throw ConfigError("uniform weights over zero layers");
    return LayerWeights(std::vector<double>(num_layers, 1.0 / static_cast<double>(num_layers)));
  }

  /// Weights proportional to per-layer FLOPs.
  static LayerWeights from_flops(std::span<const double> flops) {
    double sum = 0.0;
    for (double f : flops) {
      if (!(f >= 0.0) || !std::isfinite(f)) throw ConfigError("per-layer FLOPs must be finite and nonnegative");
      sum += f;
    }
    if (flops.empty() || sum <= 0.0) throw ConfigError("per-layer FLOPs must have a positive total");
    std::vector<double> w;
    for (double f : flops) w.push_back(f / sum);
    return LayerWeights(std::move(w));
  }

  std::size_t size() const noexcept { return w_.size(); }
  double operator[](std::size_t i) const { return w_[i]; }
  std::span<const double> values() const noexcept { return w_; }

 private:
  std::vector<double> w_;
};

/// Weighted sum of per-layer imbalance factors.
inline double aggregate_imbalance(std::span<const double> per_layer, const LayerWeights& w) {
  if (per_layer.size() != w.size())
    throw InputError("aggregate_imbalance: " + std::to_string(per_layer.size()) + " layers but " +
                     std::to_string(w.size()) + " weights");
  double acc = 0.0;
  for (std::size_t i = 0; i < per_layer.size(); ++i) acc += w[i] * per_layer[i];
  return acc;
}

/// Same, skipping layers without a value; the remaining weights are
/// renormalized. nullopt if nothing remains.
inline std::optional<double> aggregate_imbalance(std::span<const std::optional<double>> per_layer,
                                                 const LayerWeights& w) {
  if (per_layer.size() != w.size()) throw InputError("aggregate_imbalance: dimension mismatch");
  double acc = 0.0, wsum = 0.0;
  for (std::size_t i = 0; i < per_layer.size(); ++i)
    if (per_layer[i]) {
      acc += w[i] * *per_layer[i];
      wsum += w[i];
    }
  if (wsum <= 0.0) return std::nullopt;
  return acc / wsum;
}

// G x n matrix; entry (g, e) is the fraction of expert e's tokens served on
// GPU g. Every column sums to 1.
class PlacementMatrix {
 public:
  PlacementMatrix(std::size_t gpus, std::size_t experts, std::vector<double> row_major)
      : gpus_(gpus), experts_(experts), a_(std::move(row_major)) {
    if (gpus == 0 || experts == 0) throw ConfigError("placement matrix must be non-empty");
    if (a_.size() != gpus * experts) throw ConfigError("placement matrix has wrong element count");
    for (std::size_t e = 0; e < experts_; ++e) {
      double col = 0.0;
      for (std::size_t g = 0; g < gpus_; ++g) {
        const double v = at(g, e);
        if (!(v >= 0.0) || !std::isfinite(v))
          throw ConfigError("placement entry (" + std::to_string(g) + ", " + std::to_string(e) + ") is negative");
        col += v;
      }
      if (std::abs(col - 1.0) > 1e-9)
        throw ConfigError("placement column for expert " + std::to_string(e) + " sums to " + std::to_string(col));
    }
  }

  static PlacementMatrix identity(std::size_t n) {
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
    return PlacementMatrix(n, n, std::move(a));
  }

  /// Pure placement from an expert -> GPU map.
  static PlacementMatrix from_assignment(std::size_t gpus, std::span<const std::size_t> gpu_of_expert) {
    std::vector<double> a(gpus * gpu_of_expert.size(), 0.0);
    for (std::size_t e = 0; e < gpu_of_expert.size(); ++e) {
      if (gpu_of_expert[e] >= gpus) throw ConfigError("expert mapped to nonexistent GPU");
      a[gpu_of_expert[e] * gpu_of_expert.size() + e] = 1.0;
    }
    return PlacementMatrix(gpus, gpu_of_expert.size(), std::move(a));
  }

  std::size_t gpus() const noexcept { return gpus_; }
  std::size_t experts() const noexcept { return experts_; }
  double at(std::size_t g, std::size_t e) const { return a_[g * experts_ + e]; }

 private:
  std::size_t gpus_, experts_;
  std::vector<double> a_;
};

/// GPU loads per layer, [layers x G] row-major.
inline std::vector<double> gpu_loads(const AssignmentCounts& counts, const PlacementMatrix& a) {
  if (counts.num_experts() != a.experts())
    throw ConfigError("placement covers " + std::to_string(a.experts()) + " experts but counts have " +
                      std::to_string(counts.num_experts()));
  std::vector<double> out(counts.num_layers() * a.gpus(), 0.0);
  for (std::size_t l = 0; l < counts.num_layers(); ++l)
    for (std::size_t g = 0; g < a.gpus(); ++g) {
      double acc = 0.0;
      for (std::size_t e = 0; e < a.experts(); ++e) acc += a.at(g, e) * static_cast<double>(counts.at(l, e));
      out[l * a.gpus() + g] = acc;
    }
  return out;
}

struct ImbalanceReport {
  std::vector<std::optional<Imbalance>> per_layer;      // nullopt: zero-load layer, skipped
  std::vector<std::optional<Imbalance>> gpu_per_layer;  // empty without a placement
  std::optional<double> I_agg;
  std::optional<double> gpu_I_agg;
  std::size_t skipped_layers = 0;
};

inline ImbalanceReport imbalance_report(const AssignmentCounts& counts, const LayerWeights& w,
                                        const PlacementMatrix* placement = nullptr) {
  ImbalanceReport r;
  std::vector<std::optional<double>> factors;
  for (std::size_t l = 0; l < counts.num_layers(); ++l) {
    auto im = layer_imbalance(counts.row(l));
    if (!im) ++r.skipped_layers;
    r.per_layer.push_back(im);
    factors.push_back(im ? std::optional<double>(im->factor) : std::nullopt);
  }
  r.I_agg = aggregate_imbalance(std::span<const std::optional<double>>(factors), w);
  if (placement) {
    const auto loads = gpu_loads(counts, *placement);
    const std::size_t G = placement->gpus();
    std::vector<std::optional<double>> gf;
    for (std::size_t l = 0; l < counts.num_layers(); ++l) {
      auto im = gpu_imbalance(std::span<const double>(loads).subspan(l * G, G));
      r.gpu_per_layer.push_back(im);
      gf.push_back(im ? std::optional<double>(im->factor) : std::nullopt);
    }
    r.gpu_I_agg = aggregate_imbalance(std::span<const std::optional<double>>(gf), w);
  }
  return r;
}

struct BatchSummary {
  double p50_Iagg = 1.0;
  double p95_Iagg = 1.0;
  double mean_Iagg = 1.0;
  std::size_t batch_count = 0;
};

/// Nearest-rank P50/P95 and mean of per-batch I_agg samples.
inline BatchSummary summarize_batches(std::span<const double> samples) {
  if (samples.empty()) throw InputError("summarize_batches: no samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double v : samples) sum += v;
  return BatchSummary{nearest_rank_sorted(sorted, 50.0), nearest_rank_sorted(sorted, 95.0),
                      sum / static_cast<double>(samples.size()), samples.size()};
}

}  // namespace moelab
