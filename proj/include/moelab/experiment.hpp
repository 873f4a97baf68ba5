// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "moelab/error.hpp"
#include "moelab/gate_analytics.hpp"
#include "moelab/gate_scores.hpp"
#include "moelab/imbalance.hpp"
#include "moelab/perf_model.hpp"
#include "moelab/rng.hpp"
#include "moelab/routing.hpp"
#include "moelab/synthetic.hpp"
#include "moelab/trace.hpp"

namespace moelab {

// Token stream grouped into (batch, layer) cells, scores stored flat.
struct Workload {
  struct Cell {
    std::uint32_t batch;
    std::uint32_t layer;
    std::size_t begin;  // first token row
    std::size_t end;
  };
  TraceHeader header;
  std::vector<Cell> cells;         // ordered by (batch, layer)
  std::vector<std::uint32_t> tokens;
  std::vector<Phase> phases;
  std::vector<float> scores;       // rows of header.num_experts

  std::size_t num_experts() const noexcept { return header.num_experts; }
  std::size_t num_layers() const noexcept { return header.num_layers; }
  std::size_t num_tokens() const noexcept { return tokens.size(); }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(scores).subspan(i * header.num_experts, header.num_experts);
  }
  std::vector<std::uint32_t> batch_ids() const {
    std::vector<std::uint32_t> ids;
    for (const auto& c : cells)
      if (ids.empty() || ids.back() != c.batch) ids.push_back(c.batch);
    return ids;
  }
};

/// Groups a trace by (batch, layer, token); file order is kept for equal keys.
inline Workload workload_from_trace(const Trace& t) {
  std::vector<std::size_t> order(t.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = t.records[a];
    const auto& y = t.records[b];
    if (x.batch != y.batch) return x.batch < y.batch;
    if (x.layer != y.layer) return x.layer < y.layer;
    return x.token < y.token;
  });
  Workload w;
  w.header = t.header;
  w.scores.reserve(t.records.size() * t.header.num_experts);
  for (std::size_t idx : order) {
    const auto& r = t.records[idx];
    if (r.scores.size() != t.header.num_experts) throw InputError("record score length mismatch");
    if (w.cells.empty() || w.cells.back().batch != r.batch || w.cells.back().layer != r.layer)
      w.cells.push_back({r.batch, r.layer, w.tokens.size(), w.tokens.size()});
    w.tokens.push_back(r.token);
    w.phases.push_back(r.phase);
    w.scores.insert(w.scores.end(), r.scores.begin(), r.scores.end());
    ++w.cells.back().end;
  }
  return w;
}

/// Synthetic workload generated straight into the flat layout; identical
/// token stream to generate_synthetic().
inline Workload workload_from_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Workload w;
  w.header = synthetic_header(spec);
  const std::size_t total = spec.num_batches * spec.num_layers * spec.tokens_per_batch;
  w.tokens.reserve(total);
  w.phases.reserve(total);
  w.scores.reserve(total * spec.num_experts);
  for (std::size_t b = 0; b < spec.num_batches; ++b)
    for (std::size_t l = 0; l < spec.num_layers; ++l) {
      w.cells.push_back({static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(l), w.tokens.size(), 0});
      for (auto& r : generate_cell(spec, b, l)) {
        w.tokens.push_back(r.token);
        w.phases.push_back(r.phase);
        w.scores.insert(w.scores.end(), r.scores.begin(), r.scores.end());
      }
      w.cells.back().end = w.tokens.size();
    }
  return w;
}

/// Per-layer gate statistics over the workload, optionally one phase only.
inline std::vector<LayerStats> workload_layer_stats(const Workload& w, std::size_t k, const RegimeParams& rp,
                                                    std::optional<Phase> phase = std::nullopt) {
  LayerStatsAccumulator acc(k, rp);
  for (const auto& c : w.cells)
    for (std::size_t i = c.begin; i < c.end; ++i)
      if (!phase || w.phases[i] == *phase) acc.add(c.layer, GateScores(w.row(i)));
  return acc.finish();
}

enum class PolicyKind { Vanilla, LoadOnly, Laser };
enum class LoadReset { PerBatch, Cumulative };

inline std::string_view to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::Vanilla: return "vanilla";
    case PolicyKind::LoadOnly: return "load_only";
    case PolicyKind::Laser: return "laser";
  }
  return "?";
}

struct Policy {
  PolicyKind kind = PolicyKind::Vanilla;
  std::size_t k = 2;
  BandParams bands;  // Laser only
  std::string label;
};

struct RunSettings {
  LoadReset load_reset = LoadReset::PerBatch;
  std::optional<std::vector<double>> flops;  // FLOP-proportional weights; uniform otherwise
  std::optional<PlacementMatrix> placement;
};

struct DecisionRow {
  std::uint32_t batch;
  std::uint32_t layer;
  std::uint32_t token;
  const RoutingDecision& decision;
};

using DecisionSink = std::function<void(const DecisionRow&)>;

struct RunResult {
  std::string label;
  PolicyKind kind = PolicyKind::Vanilla;
  std::optional<std::size_t> c;  // set when all bands share one c
  std::vector<std::uint32_t> batch_ids;
  std::vector<AssignmentCounts> counts;  // one per batch
  std::vector<ImbalanceReport> reports;  // one per batch
  std::vector<double> iagg;              // batches with a defined I_agg
  std::vector<double> gpu_iagg;
  std::optional<BatchSummary> summary;
  std::optional<BatchSummary> gpu_summary;
  AssignmentCounts heatmap;
  std::size_t tokens_routed = 0;
  std::size_t expanded = 0;
  std::size_t skipped_layers = 0;
  double mean_tokens_per_batch = 0.0;
};

inline LayerWeights make_weights(const RunSettings& s, std::size_t num_layers) {
  if (!s.flops) return LayerWeights::uniform(num_layers);
  if (s.flops->size() != num_layers)
    throw ConfigError("FLOP weights list " + std::to_string(s.flops->size()) + " layers, workload has " +
                      std::to_string(num_layers));
  return LayerWeights::from_flops(*s.flops);
}

/// Routes the workload under one policy, batch by batch and layer by layer.
/// Tokens of a (batch, layer) cell are routed in token order against that
/// layer's evolving load vector.
inline RunResult run_policy(const Workload& w, const Policy& policy, const RunSettings& settings,
                            const DecisionSink& sink = {}) {
  const std::size_t n = w.num_experts();
  const std::size_t num_layers = w.num_layers();
  check_k(policy.k, n);
  if (policy.kind == PolicyKind::Laser) {
    policy.bands.validate(num_layers, n);
    for (const auto& b : policy.bands.bands)
      if (b.params.k != policy.k) throw ConfigError("band k differs from experiment k");
  }
  if (settings.placement && settings.placement->experts() != n)
    throw ConfigError("placement covers " + std::to_string(settings.placement->experts()) +
                      " experts, workload has " + std::to_string(n));
  const LayerWeights weights = make_weights(settings, num_layers);

  RunResult r;
  r.label = policy.label.empty() ? std::string(to_string(policy.kind)) : policy.label;
  r.kind = policy.kind;
  if (policy.kind == PolicyKind::Laser && !policy.bands.bands.empty()) {
    const std::size_t c0 = policy.bands.bands.front().params.c;
    bool same = true;
    for (const auto& b : policy.bands.bands) same = same && b.params.c == c0;
    if (same) r.c = c0;
  }
  r.heatmap = AssignmentCounts(num_layers, n);

  std::vector<LoadVector> cumulative(num_layers, LoadVector(n));
  std::size_t cell_count = 0;
  std::size_t ci = 0;
  while (ci < w.cells.size()) {
    const std::uint32_t batch = w.cells[ci].batch;
    AssignmentCounts counts(num_layers, n);
    for (; ci < w.cells.size() && w.cells[ci].batch == batch; ++ci) {
      const auto& cell = w.cells[ci];
      ++cell_count;
      LoadVector fresh(n);
      LoadVector& loads = settings.load_reset == LoadReset::PerBatch ? fresh : cumulative[cell.layer];
      const LaserParams* lp = policy.kind == PolicyKind::Laser ? &resolve_band(policy.bands, cell.layer) : nullptr;
      Rng rng(mix_seed(lp ? lp->rng_seed : 0, cell.batch, cell.layer));
      for (std::size_t i = cell.begin; i < cell.end; ++i) {
        RoutingDecision d;
        try {
          const GateScores s(w.row(i));
          switch (policy.kind) {
            case PolicyKind::Vanilla: d = route_vanilla_topk(s, policy.k); break;
            case PolicyKind::LoadOnly: d = route_load_only(loads, policy.k); break;
            case PolicyKind::Laser: d = route_laser(s, loads, *lp, rng); break;
          }
        } catch (const InputError& e) {
          throw InputError("batch " + std::to_string(cell.batch) + " layer " + std::to_string(cell.layer) +
                           " token " + std::to_string(w.tokens[i]) + ": " + e.what());
        }
        apply_decision(loads, d);
        for (std::size_t e : d.selected) ++counts.at(cell.layer, e);
        if (d.path == RoutePath::Expanded) ++r.expanded;
        ++r.tokens_routed;
        if (sink) sink(DecisionRow{cell.batch, cell.layer, w.tokens[i], d});
      }
    }
    auto report = imbalance_report(counts, weights, settings.placement ? &*settings.placement : nullptr);
    r.skipped_layers += report.skipped_layers;
    if (report.I_agg) r.iagg.push_back(*report.I_agg);
    if (report.gpu_I_agg) r.gpu_iagg.push_back(*report.gpu_I_agg);
    r.heatmap += counts;
    r.batch_ids.push_back(batch);
    r.counts.push_back(std::move(counts));
    r.reports.push_back(std::move(report));
  }
  if (!r.iagg.empty()) r.summary = summarize_batches(r.iagg);
  if (!r.gpu_iagg.empty()) r.gpu_summary = summarize_batches(r.gpu_iagg);
  if (!r.batch_ids.empty() && cell_count > 0)
    r.mean_tokens_per_batch = static_cast<double>(r.tokens_routed) / static_cast<double>(cell_count);
  return r;
}

/// Copy of `bands` with every band's working-set cap set to c.
inline BandParams with_c(BandParams bands, std::size_t c) {
  for (auto& b : bands.bands) b.params.c = c;
  return bands;
}

// ---------------------------------------------------------------------------
// Output files. All writers are deterministic: fixed column order, doubles
// printed with 17 significant digits.

namespace io {

inline std::ofstream open_out(const std::filesystem::path& p) {
  if (!p.parent_path().empty()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + p.string());
  os.precision(17);
  return os;
}

inline void write_decision_header(std::ostream& os) { os << "batch,layer,token,path,m,c_star,selected\n"; }

inline void write_decision(std::ostream& os, const DecisionRow& row) {
  os << row.batch << ',' << row.layer << ',' << row.token << ',' << to_string(row.decision.path) << ','
     << row.decision.pool_size << ',' << row.decision.working_set_size << ',';
  for (std::size_t i = 0; i < row.decision.selected.size(); ++i)
    os << (i ? ";" : "") << row.decision.selected[i];
  os << '\n';
}

inline void write_count_matrix(std::ostream& os, const AssignmentCounts& c) {
  os << "layer";
  for (std::size_t e = 0; e < c.num_experts(); ++e) os << ",e" << e;
  os << '\n';
  for (std::size_t l = 0; l < c.num_layers(); ++l) {
    os << l;
    for (std::size_t e = 0; e < c.num_experts(); ++e) os << ',' << c.at(l, e);
    os << '\n';
  }
}

inline void write_imbalance_csv(std::ostream& os, const RunResult& r) {
  os << "batch,layer,I,MV,gpu_I,gpu_MV\n";
  for (std::size_t b = 0; b < r.reports.size(); ++b) {
    const auto& rep = r.reports[b];
    for (std::size_t l = 0; l < rep.per_layer.size(); ++l) {
      os << r.batch_ids[b] << ',' << l << ',';
      if (rep.per_layer[l]) os << rep.per_layer[l]->factor << ',' << rep.per_layer[l]->max_violation;
      else os << ',';
      os << ',';
      if (l < rep.gpu_per_layer.size() && rep.gpu_per_layer[l])
        os << rep.gpu_per_layer[l]->factor << ',' << rep.gpu_per_layer[l]->max_violation;
      else os << ',';
      os << '\n';
    }
  }
}

/// counts_{batch}.csv, imbalance.csv and heatmap.csv for one run.
inline void write_run_files(const std::filesystem::path& dir, const RunResult& r) {
  for (std::size_t b = 0; b < r.counts.size(); ++b) {
    auto os = open_out(dir / ("counts_" + std::to_string(r.batch_ids[b]) + ".csv"));
    write_count_matrix(os, r.counts[b]);
  }
  {
    auto os = open_out(dir / "imbalance.csv");
    write_imbalance_csv(os, r);
  }
  auto os = open_out(dir / "heatmap.csv");
  write_count_matrix(os, r.heatmap);
}

inline nlohmann::ordered_json summary_json(const std::optional<BatchSummary>& s) {
  if (!s) return nullptr;
  return {{"p50", s->p50_Iagg}, {"p95", s->p95_Iagg}, {"mean", s->mean_Iagg}, {"batches", s->batch_count}};
}

}  // namespace io

// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::variant<std::filesystem::path, SyntheticSpec> workload = SyntheticSpec{};
  std::size_t k = 2;
  PolicyKind policy = PolicyKind::Laser;
  BandParams bands;                 // Laser bands; k of each band equals `k`
  std::vector<std::size_t> sweep;   // c values, each in [k, n]
  bool baselines = true;            // also run vanilla and load-only
  RunSettings settings;
  std::optional<PerfParams> perf;
  RegimeParams regime;
};

struct PerfRow {
  double i_used;
  PerfEstimate estimate;
};

struct ExperimentResult {
  TraceHeader header;
  std::size_t num_tokens = 0;
  std::vector<LayerStats> layer_stats;
  std::vector<RunResult> runs;              // primary first, then baselines
  std::vector<RunResult> sweep;             // one per c value
  std::map<std::string, PerfRow> perf;      // by run label

  const RunResult* find(std::string_view label) const {
    for (const auto& r : runs)
      if (r.label == label) return &r;
    for (const auto& r : sweep)
      if (r.label == label) return &r;
    return nullptr;
  }
};

inline Workload load_workload(const ExperimentConfig& cfg) {
  if (const auto* p = std::get_if<std::filesystem::path>(&cfg.workload)) return workload_from_trace(replay_trace(*p));
  return workload_from_synthetic(std::get<SyntheticSpec>(cfg.workload));
}

/// Runs the configured policy, the baselines and the c sweep over one
/// shared token stream. With `out_dir`, writes every artifact:
///   <out>/summary.json, <out>/layerstats.csv,
///   <out>/<label>/{decisions.csv, counts_<batch>.csv, imbalance.csv, heatmap.csv}
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const Workload& w,
                                       const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                       const nlohmann::ordered_json& config_echo = nullptr) {
  const std::size_t n = w.num_experts();
  check_k(cfg.k, n);
  for (std::size_t c : cfg.sweep)
    if (c < cfg.k || c > n)
      throw ConfigError("sweep value c=" + std::to_string(c) + " outside [k, n] = [" + std::to_string(cfg.k) +
                        ", " + std::to_string(n) + "]");
  if (cfg.perf) cfg.perf->validate();

  ExperimentResult res;
  res.header = w.header;
  res.num_tokens = w.num_tokens();
  res.layer_stats = workload_layer_stats(w, cfg.k, cfg.regime);

  auto run = [&](const Policy& p) {
    if (!out_dir) return run_policy(w, p, cfg.settings);
    const std::string label = p.label.empty() ? std::string(to_string(p.kind)) : p.label;
    auto os = io::open_out(*out_dir / label / "decisions.csv");
    io::write_decision_header(os);
    auto r = run_policy(w, p, cfg.settings, [&](const DecisionRow& row) { io::write_decision(os, row); });
    io::write_run_files(*out_dir / label, r);
    return r;
  };

  res.runs.push_back(run(Policy{cfg.policy, cfg.k, cfg.bands, std::string(to_string(cfg.policy))}));
  const bool want_vanilla = cfg.baselines || cfg.perf.has_value();
  if (cfg.policy != PolicyKind::Vanilla && want_vanilla)
    res.runs.push_back(run(Policy{PolicyKind::Vanilla, cfg.k, {}, "vanilla"}));
  if (cfg.policy != PolicyKind::LoadOnly && cfg.baselines)
    res.runs.push_back(run(Policy{PolicyKind::LoadOnly, cfg.k, {}, "load_only"}));
  if (!cfg.sweep.empty() && cfg.bands.bands.empty()) throw ConfigError("sweep requires laser bands");
  for (std::size_t c : cfg.sweep)
    res.sweep.push_back(run(Policy{PolicyKind::Laser, cfg.k, with_c(cfg.bands, c), "laser_c" + std::to_string(c)}));

  if (cfg.perf) {
    const auto i_of = [&](const RunResult& r) -> std::optional<double> {
      const auto& s = cfg.settings.placement ? r.gpu_summary : r.summary;
      return s ? std::optional<double>(s->mean_Iagg) : std::nullopt;
    };
    const auto base = i_of(*res.find("vanilla"));
    auto add = [&](const RunResult& r) {
      const auto i = i_of(r);
      if (!i || !base) return;
      PerfEstimate e;
      e.t_step = step_time(*i, *cfg.perf);
      e.throughput_ratio_vs_base = throughput_ratio(*i, *base, *cfg.perf);
      e.cost_per_token = cost_per_token(e.t_step / std::max(1.0, r.mean_tokens_per_batch), *cfg.perf);
      res.perf[r.label] = PerfRow{*i, e};
    };
    for (const auto& r : res.runs) add(r);
    for (const auto& r : res.sweep) add(r);
  }

  if (out_dir) {
    {
      auto os = io::open_out(*out_dir / "layerstats.csv");
      write_layer_stats_csv(os, res.layer_stats);
    }
    nlohmann::ordered_json j;
    j["rng_algorithm"] = Rng::kAlgorithm;
    j["config"] = config_echo;
    j["workload"] = {{"num_layers", w.num_layers()},
                     {"num_experts", n},
                     {"batches", w.batch_ids().size()},
                     {"tokens", w.num_tokens()}};
    auto run_json = [&](const RunResult& r) {
      nlohmann::ordered_json rj;
      rj["label"] = r.label;
      rj["policy"] = to_string(r.kind);
      rj["c"] = r.c ? nlohmann::ordered_json(*r.c) : nlohmann::ordered_json(nullptr);
      rj["expert"] = io::summary_json(r.summary);
      rj["gpu"] = io::summary_json(r.gpu_summary);
      rj["skipped_layers"] = r.skipped_layers;
      rj["expanded_fraction"] =
          r.tokens_routed ? static_cast<double>(r.expanded) / static_cast<double>(r.tokens_routed) : 0.0;
      if (auto it = res.perf.find(r.label); it != res.perf.end())
        rj["perf"] = {{"imbalance", it->second.i_used},
                      {"t_step", it->second.estimate.t_step},
                      {"throughput_ratio_vs_base", it->second.estimate.throughput_ratio_vs_base},
                      {"cost_per_token", it->second.estimate.cost_per_token}};
      return rj;
    };
    j["runs"] = nlohmann::ordered_json::array();
    for (const auto& r : res.runs) j["runs"].push_back(run_json(r));
    j["sweep"] = nlohmann::ordered_json::array();
    for (const auto& r : res.sweep) j["sweep"].push_back(run_json(r));
    auto os = io::open_out(*out_dir / "summary.json");
    os << j.dump(2) << '\n';
  }
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                       const nlohmann::ordered_json& config_echo = nullptr) {
  return run_experiment(cfg, load_workload(cfg), out_dir, config_echo);
}

}  // namespace moelab
