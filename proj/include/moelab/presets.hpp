// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string_view>

#include "moelab/gate_analytics.hpp"
#include "moelab/routing.hpp"

namespace moelab {

// Per-model/per-dataset thresholds for early/middle/final layers.
struct Preset {
  std::string_view name;
  std::string_view model;
  std::string_view dataset;
  std::size_t k;
  std::array<double, 3> t_fix;
  std::array<double, 3> eps_high;
};

inline constexpr std::array<Preset, 8> kPresets = {{
    {"deepseek-arc-challenge", "DeepSeek-MoE-16B-Chat", "ARC-Challenge", 6, {0.80, 0.80, 0.80}, {0.40, 0.40, 0.40}},
    {"deepseek-arc-easy", "DeepSeek-MoE-16B-Chat", "ARC-Easy", 6, {0.80, 0.80, 0.80}, {0.35, 0.35, 0.35}},
    {"mixtral-arc-challenge", "Mixtral-8x7B", "ARC-Challenge", 2, {0.60, 0.60, 0.60}, {0.7159, 0.6419, 0.6285}},
    {"mixtral-arc-easy", "Mixtral-8x7B", "ARC-Easy", 2, {0.60, 0.60, 0.60}, {0.7159, 0.6419, 0.6285}},
    {"deepseek-gsm8k", "DeepSeek-MoE-16B-Chat", "GSM8K", 6, {0.25, 0.45, 0.55}, {0.30, 0.30, 0.30}},
    {"deepseek-mmlu", "DeepSeek-MoE-16B-Chat", "MMLU", 6, {0.80, 0.80, 0.80}, {0.40, 0.40, 0.40}},
    {"mixtral-gsm8k", "Mixtral-8x7B", "GSM8K", 2, {0.60, 0.60, 0.60}, {0.72, 0.75, 0.80}},
    {"mixtral-mmlu", "Mixtral-8x7B", "MMLU", 2, {0.40, 0.40, 0.40}, {0.7159, 0.6419, 0.6285}},
}};

inline const Preset* find_preset(std::string_view name) {
  for (const auto& p : kPresets)
    if (p.name == name) return &p;
  return nullptr;
}

/// Expands a preset over `num_layers` layers. Band boundaries are not part
/// of a preset; the default split is thirds() (first and last
/// floor(L/3) layers are early and final). With fewer than three layers all
/// layers take the middle-band values.
inline BandParams preset_bands(const Preset& preset, std::size_t num_layers, const LaserParams& base) {
  const auto ranges = thirds(num_layers);
  BandParams out;
  for (const auto& r : ranges) {
    std::size_t slot = 1;
    if (ranges.size() == 3) slot = static_cast<std::size_t>(&r - ranges.data());
    LaserParams p = base;
    p.t_fix = preset.t_fix[slot];
    p.eps_high = preset.eps_high[slot];
    out.bands.push_back({r, p});
  }
  return out;
}

}  // namespace moelab
