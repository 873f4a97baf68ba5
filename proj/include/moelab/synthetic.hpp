// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "moelab/error.hpp"
#include "moelab/rng.hpp"
#include "moelab/routing.hpp"
#include "moelab/trace.hpp"

namespace moelab {

// Symmetric Dirichlet(alpha) over all experts.
struct DirichletGen {
  double alpha = 1.0;
};

// Mass p_head on one head expert, the remaining 1 - p_head spread over the
// other experts by Dirichlet(alpha_tail).
struct SpikedGen {
  double p_head = 0.8;
  double alpha_tail = 1.0;
};

struct GeneratorSpec {
  std::variant<DirichletGen, SpikedGen> kind = DirichletGen{};
  // Zipf exponent of expert popularity. 0 keeps every expert exchangeable;
  // s > 0 makes expert e proportionally (e + 1)^-s as likely to be the head
  // (Spiked) or scales its Dirichlet concentration by the same weight.
  double hot_skew = 0.0;
};

struct SyntheticBand {
  LayerRange layers;
  GeneratorSpec generator;
};

struct SyntheticSpec {
  std::size_t num_layers = 1;
  std::size_t num_experts = 8;
  std::size_t tokens_per_batch = 512;
  std::size_t num_batches = 1;
  std::vector<SyntheticBand> bands;  // empty: Dirichlet(1) everywhere
  Phase phase = Phase::Decode;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (num_layers == 0 || num_experts == 0 || tokens_per_batch == 0 || num_batches == 0)
      throw ConfigError("synthetic workload sizes must be positive");
    if (num_layers > 65536) throw ConfigError("synthetic workload: at most 65536 layers");
    std::vector<int> covered(num_layers, 0);
    for (const auto& b : bands) {
      if (b.layers.lo > b.layers.hi || b.layers.hi >= num_layers)
        throw ConfigError("synthetic band [" + std::to_string(b.layers.lo) + ".." + std::to_string(b.layers.hi) +
                          "] outside layer range");
      for (std::size_t l = b.layers.lo; l <= b.layers.hi; ++l) ++covered[l];
      if (!(b.generator.hot_skew >= 0.0)) throw ConfigError("hot_skew must be >= 0");
      if (const auto* d = std::get_if<DirichletGen>(&b.generator.kind)) {
        if (!(d->alpha > 0.0) || !std::isfinite(d->alpha)) throw ConfigError("dirichlet alpha must be > 0");
      } else {
        const auto& s = std::get<SpikedGen>(b.generator.kind);
        if (!(s.p_head > 0.0 && s.p_head < 1.0)) throw ConfigError("spiked p_head must be in (0, 1)");
        if (!(s.alpha_tail > 0.0) || !std::isfinite(s.alpha_tail))
          throw ConfigError("spiked alpha_tail must be > 0");
        if (num_experts < 2) throw ConfigError("spiked generator needs at least 2 experts");
      }
    }
    if (!bands.empty())
      for (std::size_t l = 0; l < num_layers; ++l)
        if (covered[l] != 1)
          throw ConfigError("synthetic bands must cover layer " + std::to_string(l) + " exactly once");
  }

  const GeneratorSpec& generator_for(std::size_t layer) const {
    static const GeneratorSpec kDefault{};
    for (const auto& b : bands)
      if (b.layers.contains(layer)) return b.generator;
    return kDefault;
  }
};

namespace detail {

inline std::vector<double> popularity(std::size_t n, double skew) {
  std::vector<double> w(n);
  double sum = 0.0;
  for (std::size_t e = 0; e < n; ++e) sum += w[e] = std::pow(static_cast<double>(e + 1), -skew);
  for (double& v : w) v /= sum;
  return w;
}

inline std::vector<double> sample_dirichlet(Rng& rng, std::span<const double> alphas) {
  std::vector<double> g(alphas.size());
  double sum = 0.0;
  do {
    sum = 0.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) sum += g[i] = rng.gamma(alphas[i]);
  } while (!(sum > 0.0));
  for (double& v : g) v /= sum;
  return g;
}

}  // namespace detail

/// One synthetic gate-score row in double precision.
inline std::vector<double> sample_scores(Rng& rng, std::size_t n, const GeneratorSpec& gen) {
  const auto w = detail::popularity(n, gen.hot_skew);
  if (const auto* d = std::get_if<DirichletGen>(&gen.kind)) {
    std::vector<double> alphas(n);
    for (std::size_t e = 0; e < n; ++e) alphas[e] = d->alpha * static_cast<double>(n) * w[e];
    return detail::sample_dirichlet(rng, alphas);
  }
  const auto& s = std::get<SpikedGen>(gen.kind);
  std::size_t head = n - 1;
  if (gen.hot_skew == 0.0) {
    head = static_cast<std::size_t>(rng.uniform_below(n));
  } else {
    double u = rng.uniform01();
    for (std::size_t e = 0; e < n; ++e) {
      if (u < w[e]) {
        head = e;
        break;
      }
      u -= w[e];
    }
  }
  const std::vector<double> tail_alpha(n - 1, s.alpha_tail);
  const auto tail = detail::sample_dirichlet(rng, tail_alpha);
  std::vector<double> out(n);
  out[head] = s.p_head;
  for (std::size_t e = 0, t = 0; e < n; ++e)
    if (e != head) out[e] = (1.0 - s.p_head) * tail[t++];
  return out;
}

inline TraceHeader synthetic_header(const SyntheticSpec& spec) {
  return TraceHeader{static_cast<std::uint32_t>(spec.num_experts), static_cast<std::uint32_t>(spec.num_layers),
                     true};
}

/// Records for one (batch, layer) cell. Each cell draws from its own
/// generator stream, so cells can be produced in any order.
inline std::vector<TraceRecord> generate_cell(const SyntheticSpec& spec, std::size_t batch, std::size_t layer) {
  Rng rng(mix_seed(spec.rng_seed, batch, layer));
  const auto& gen = spec.generator_for(layer);
  std::vector<TraceRecord> out;
  out.reserve(spec.tokens_per_batch);
  for (std::size_t t = 0; t < spec.tokens_per_batch; ++t) {
    const auto row = sample_scores(rng, spec.num_experts, gen);
    TraceRecord r{static_cast<std::uint32_t>(batch), static_cast<std::uint16_t>(layer),
                  static_cast<std::uint32_t>(t), spec.phase, {}};
    r.scores.assign(row.begin(), row.end());
    // Keep the spike at or above p_head after narrowing to f32.
    if (const auto* s = std::get_if<SpikedGen>(&gen.kind))
      for (std::size_t e = 0; e < row.size(); ++e)
        if (row[e] == s->p_head && static_cast<double>(r.scores[e]) < s->p_head)
          r.scores[e] = std::nextafter(r.scores[e], 2.0f);
    out.push_back(std::move(r));
  }
  return out;
}

/// Full workload ordered by (batch, layer, token). Deterministic in the seed.
inline Trace generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Trace t{synthetic_header(spec), {}};
  t.records.reserve(spec.num_batches * spec.num_layers * spec.tokens_per_batch);
  for (std::size_t b = 0; b < spec.num_batches; ++b)
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
      auto cell = generate_cell(spec, b, l);
      t.records.insert(t.records.end(), std::make_move_iterator(cell.begin()), std::make_move_iterator(cell.end()));
    }
  return t;
}

}  // namespace moelab
