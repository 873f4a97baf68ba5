// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "moelab/error.hpp"

namespace moelab {

/// One token's gate probability vector over the experts of a layer.
///
/// Construction validates the vector: entries must be finite and
/// nonnegative, not all zero, and sum to 1. Sums within 1e-3 of 1 are
/// accepted (trace round-off); sums off by more than 1e-6 are renormalized,
/// smaller deviations are kept bit-for-bit.
class GateScores {
 public:
  static constexpr double kAcceptTolerance = 1e-3;
  static constexpr double kExactTolerance = 1e-6;

  GateScores() = default;

  template <typename T>
  explicit GateScores(std::span<const T> raw) : scores_(raw.begin(), raw.end()) {
    validate_and_normalize();
  }
  explicit GateScores(std::vector<double> raw) : scores_(std::move(raw)) { validate_and_normalize(); }
  GateScores(std::initializer_list<double> raw) : scores_(raw) { validate_and_normalize(); }

  std::size_t size() const noexcept { return scores_.size(); }
  double operator[](std::size_t i) const { return scores_[i]; }
  std::span<const double> values() const noexcept { return scores_; }

 private:
  void validate_and_normalize() {
    if (scores_.empty()) throw InputError("gate score vector is empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < scores_.size(); ++i) {
      const double v = scores_[i];
      if (!std::isfinite(v)) throw InputError("gate score " + std::to_string(i) + " is not finite");
      if (v < 0.0) throw InputError("gate score " + std::to_string(i) + " is negative");
      sum += v;
    }
    if (sum <= 0.0) throw InputError("gate score vector is all zero");
    const double dev = std::abs(sum - 1.0);
    if (dev > kAcceptTolerance)
      throw InputError("gate scores sum to " + std::to_string(sum) + ", expected 1");
    if (dev > kExactTolerance)
      for (double& v : scores_) v /= sum;
  }

  std::vector<double> scores_;
};

/// Indices ordered by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_by_score(std::span<const double> s) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return idx;
}

/// The k highest-scoring expert indices, in rank order.
inline std::vector<std::size_t> top_k_indices(const GateScores& s, std::size_t k) {
  if (k < 1 || k > s.size()) throw ParameterError("k must satisfy 1 <= k <= n");
  auto idx = rank_by_score(s.values());
  idx.resize(k);
  return idx;
}

/// Sum of the k largest scores.
inline double top_k_mass(const GateScores& s, std::size_t k) {
  if (k < 1 || k > s.size()) throw ParameterError("k must satisfy 1 <= k <= n");
  std::vector<double> sorted(s.values().begin(), s.values().end());
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end(),
                    std::greater<>());
  double mass = 0.0;
  for (std::size_t i = 0; i < k; ++i) mass += sorted[i];
  return mass;
}

/// Shannon entropy in nats, with 0 ln 0 = 0.
inline double entropy(const GateScores& s) {
  double h = 0.0;
  for (double v : s.values())
    if (v > 0.0) h -= v * std::log(v);
  return std::max(h, 0.0);
}

/// Entropy divided by ln n; 0 for n = 1.
inline double normalized_entropy(const GateScores& s) {
  if (s.size() < 2) return 0.0;
  return entropy(s) / std::log(static_cast<double>(s.size()));
}

}  // namespace moelab
