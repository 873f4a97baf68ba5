// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "moelab/error.hpp"

namespace moelab {

// Analytical step-time model: t_step = gamma * I_agg_gpu + t_comm + t_offload.
// The defaults (gamma = 1, no constant term) give dimensionless ratios.
struct PerfParams {
  double gamma = 1.0;      // seconds per unit imbalance
  double t_comm = 0.0;     // seconds
  double t_offload = 0.0;  // seconds
  double gpu_price = 0.0;  // currency per GPU-hour
  std::size_t gpu_count = 1;

  double constant() const noexcept { return t_comm + t_offload; }

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("perf.gamma must be > 0");
    if (!(t_comm >= 0.0) || !(t_offload >= 0.0)) throw ConfigError("perf.t_comm and perf.t_offload must be >= 0");
    if (!(gpu_price >= 0.0)) throw ConfigError("perf.gpu_price must be >= 0");
    if (gpu_count < 1) throw ConfigError("perf.gpu_count must be >= 1");
  }
};

struct PerfEstimate {
  double t_step = 0.0;
  double throughput_ratio_vs_base = 1.0;
  double cost_per_token = 0.0;
};

namespace detail {
// Imbalance factors computed from fractional GPU loads can land a few ulps
// below 1 at perfect balance.
inline void check_imbalance(double i, const char* what) {
  if (!(i >= 1.0 - 1e-12)) throw InputError(std::string(what) + " must be >= 1");
}
}  // namespace detail

inline double step_time(double i_agg_gpu, const PerfParams& p) {
  detail::check_imbalance(i_agg_gpu, "imbalance");
  return p.gamma * i_agg_gpu + p.t_comm + p.t_offload;
}

/// throughput(policy) / throughput(base) = t_step(base) / t_step(policy).
inline double throughput_ratio(double i_policy, double i_base, const PerfParams& p) {
  detail::check_imbalance(i_policy, "policy imbalance");
  detail::check_imbalance(i_base, "base imbalance");
  return (p.gamma * i_base + p.constant()) / (p.gamma * i_policy + p.constant());
}

inline double cost_per_token(double t_token, const PerfParams& p) {
  if (!(t_token >= 0.0)) throw InputError("per-token time must be >= 0");
  return p.gpu_price * static_cast<double>(p.gpu_count) / 3600.0 * t_token;
}

}  // namespace moelab
