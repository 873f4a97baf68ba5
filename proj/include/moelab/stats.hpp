// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "moelab/error.hpp"

namespace moelab {

// Nearest-rank percentile of an ascending-sorted sample: the value at rank
// ceil(p/100 * N), 1-based. p in (0, 100].
inline double nearest_rank_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw InputError("percentile of empty sample");
  if (!(p > 0.0 && p <= 100.0)) throw ParameterError("percentile must be in (0, 100]");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline double nearest_rank(std::vector<double> samples, double p) {
  std::sort(samples.begin(), samples.end());
  return nearest_rank_sorted(samples, p);
}

}  // namespace moelab
