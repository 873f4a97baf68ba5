// SPDX-License-Identifier: Apache-2.0
//
// moelab: MoE routing laboratory command-line driver.
//
//   moelab run     --config exp.json [overrides]
//   moelab sweep   --config exp.json --c-list 2,3,4 [overrides]
//   moelab analyze trace.bin --k 2 [--suggest]
//   moelab gen     --out trace.bin [--config exp.json | --layers ... --band ...]
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "moelab/moelab.hpp"

namespace fs = std::filesystem;
using namespace moelab;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::string default_out_dir() {
  if (const char* env = std::getenv("MOELAB_OUT_DIR"); env && *env) return env;
  return "moelab_out";
}

struct OverrideFlags {
  std::string config;
  Overrides o;
  std::string c_list;
  std::uint64_t seed = 0;
};

void add_override_flags(CLI::App* app, OverrideFlags& f) {
  app->add_option("--config", f.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  app->add_option_function<std::string>("--out-dir", [&](const std::string& v) { f.o.out_dir = v; },
                                        "Output directory (default $MOELAB_OUT_DIR or ./moelab_out)");
  app->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { f.o.seed = v; }, "Experiment seed");
  app->add_option_function<std::string>("--policy", [&](const std::string& v) { f.o.policy = v; },
                                        "vanilla | load_only | laser");
  app->add_option("--c-list", f.c_list, "Comma-separated candidate pool caps to sweep");
  app->add_option_function<std::string>("--preset", [&](const std::string& v) { f.o.preset = v; },
                                        "Threshold preset, e.g. mixtral-gsm8k");
  app->add_option_function<std::string>("--weights", [&](const std::string& v) { f.o.weights = v; },
                                        "uniform | flops:<path>");
  app->add_option_function<std::string>("--placement", [&](const std::string& v) { f.o.placement = v; },
                                        "Placement matrix CSV (GPUs x experts)");
  app->add_option_function<std::string>("--load-reset", [&](const std::string& v) { f.o.load_reset = v; },
                                        "batch | cumulative");
}

std::vector<std::size_t> parse_c_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || tok[0] == '-') throw ConfigError("--c-list: not a positive integer: '" + tok + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--c-list: empty");
  return out;
}

ResolvedConfig resolve_from_flags(OverrideFlags& f) {
  Json doc = load_config_file(f.config);
  if (!f.c_list.empty()) f.o.c_list = parse_c_list(f.c_list);
  apply_overrides(doc, f.o);
  auto rc = resolve_config(doc, fs::path(f.config).parent_path());
  if (!rc.out_dir) rc.out_dir = default_out_dir();
  for (const auto& w : rc.warnings) std::cerr << "warning: " << w << '\n';
  return rc;
}

void print_row(const RunResult& r) {
  if (!r.summary) {
    std::printf("%-14s %10s %10s %10s\n", r.label.c_str(), "-", "-", "-");
    return;
  }
  std::printf("%-14s %10.4f %10.4f %10.4f", r.label.c_str(), r.summary->p50_Iagg, r.summary->p95_Iagg,
              r.summary->mean_Iagg);
  if (r.gpu_summary) std::printf(" %10.4f", r.gpu_summary->mean_Iagg);
  std::printf("  expanded %5.1f%%\n",
              r.tokens_routed ? 100.0 * static_cast<double>(r.expanded) / static_cast<double>(r.tokens_routed) : 0.0);
}

void print_table(const ExperimentResult& res, bool gpu) {
  std::printf("%-14s %10s %10s %10s%s\n", "run", "P50 I_agg", "P95 I_agg", "mean I_agg", gpu ? "   mean GPU" : "");
  for (const auto& r : res.runs) print_row(r);
  for (const auto& r : res.sweep) print_row(r);
}

int finish_experiment(ResolvedConfig& rc) {
  const fs::path out = *rc.out_dir;
  auto res = run_experiment(rc.experiment, rc.workload, out, rc.effective);
  {
    auto os = io::open_out(out / "effective_config.json");
    os << rc.effective.dump(2) << '\n';
  }
  print_table(res, rc.experiment.settings.placement.has_value());
  for (const auto& [label, row] : res.perf)
    std::printf("perf %-14s t_step %.6g  throughput x%.4f  cost/token %.6g\n", label.c_str(), row.estimate.t_step,
                row.estimate.throughput_ratio_vs_base, row.estimate.cost_per_token);
  std::printf("artifacts written to %s\n", out.string().c_str());
  return 0;
}

// "lo-hi:dirichlet:alpha" or "lo-hi:spiked:p_head[:alpha_tail]", optional
// trailing ":skew=<s>".
SyntheticBand parse_band(const std::string& spec) {
  std::vector<std::string> parts;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ':')) parts.push_back(tok);
  auto fail = [&]() -> SyntheticBand {
    throw ConfigError("--band '" + spec + "': expected lo-hi:dirichlet:alpha or lo-hi:spiked:p_head[:alpha_tail]");
  };
  if (parts.size() < 3) return fail();
  SyntheticBand b;
  if (!parts.empty() && parts.back().rfind("skew=", 0) == 0) {
    b.generator.hot_skew = std::stod(parts.back().substr(5));
    parts.pop_back();
  }
  const auto dash = parts[0].find('-');
  if (dash == std::string::npos) return fail();
  try {
    b.layers = {std::stoul(parts[0].substr(0, dash)), std::stoul(parts[0].substr(dash + 1))};
    if (parts[1] == "dirichlet" && parts.size() == 3) {
      b.generator.kind = DirichletGen{std::stod(parts[2])};
    } else if (parts[1] == "spiked" && (parts.size() == 3 || parts.size() == 4)) {
      b.generator.kind = SpikedGen{std::stod(parts[2]), parts.size() == 4 ? std::stod(parts[3]) : 1.0};
    } else {
      return fail();
    }
  } catch (const std::logic_error&) {
    return fail();
  }
  return b;
}

LayerBands parse_layer_bands(const std::string& s) {
  LayerBands out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto dash = tok.find('-');
    try {
      if (dash == std::string::npos) throw std::invalid_argument(tok);
      out.push_back({std::stoul(tok.substr(0, dash)), std::stoul(tok.substr(dash + 1))});
    } catch (const std::logic_error&) {
      throw ConfigError("--bands: expected lo-hi[,lo-hi...], got '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moelab: load- and score-aware MoE routing laboratory"};
  app.require_subcommand(1);

  OverrideFlags run_flags;
  auto* run = app.add_subcommand("run", "Run an experiment config and print P50/P95/mean I_agg per policy");
  add_override_flags(run, run_flags);

  OverrideFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "Paired runs of LASER over several candidate pool caps");
  add_override_flags(sweep, sweep_flags);
  sweep->get_option("--c-list")->required();

  std::string trace_path;
  std::size_t an_k = 2;
  double tau_dom = 0.6, tau_plateau = 0.8, target_rate = 0.5, t_fix = 0.6;
  std::string phase = "all", bands_spec, an_out;
  bool suggest = false;
  std::optional<std::size_t> an_c;
  auto* analyze = app.add_subcommand("analyze", "Per-layer gate statistics (M_k, entropy, regimes)");
  analyze->add_option("trace", trace_path, "Trace file (.bin or .ndjson)")->required()->check(CLI::ExistingFile);
  analyze->add_option("--k", an_k, "Experts per token");
  analyze->add_option("--tau-dom", tau_dom, "Single-head threshold on the max score");
  analyze->add_option("--tau-plateau", tau_plateau, "Plateau threshold on s_(2)/s_(1)");
  analyze->add_option("--phase", phase, "prefill | decode | all")->check(CLI::IsMember({"prefill", "decode", "all"}));
  analyze->add_flag("--suggest", suggest, "Print band parameters calibrated from the statistics");
  analyze->add_option("--bands", bands_spec, "Calibration bands lo-hi,lo-hi,... (default: thirds)");
  analyze->add_option("--target-rate", target_rate, "Target expansion rate for --suggest");
  analyze->add_option("--t-fix", t_fix, "t_fix for suggested bands");
  analyze->add_option_function<std::size_t>("--c", [&](std::size_t v) { an_c = v; }, "c for suggested bands");
  analyze->add_option("--out-dir", an_out, "Output directory for layerstats.csv");

  std::string gen_out, gen_config;
  std::size_t g_layers = 32, g_experts = 8, g_tokens = 512, g_batches = 10;
  std::uint64_t g_seed = 1;
  std::string g_phase = "decode";
  std::vector<std::string> g_bands;
  auto* gen = app.add_subcommand("gen", "Write a synthetic gate-score trace");
  gen->add_option("--out", gen_out, "Output trace path (.bin, or .ndjson for text)")->required();
  gen->add_option("--config", gen_config, "Take the workload from a config's workload.synthetic section")
      ->check(CLI::ExistingFile);
  gen->add_option("--layers", g_layers);
  gen->add_option("--experts", g_experts);
  gen->add_option("--tokens", g_tokens, "Tokens per batch");
  gen->add_option("--batches", g_batches);
  gen->add_option("--seed", g_seed);
  gen->add_option("--phase", g_phase)->check(CLI::IsMember({"prefill", "decode"}));
  gen->add_option("--band", g_bands, "lo-hi:dirichlet:alpha | lo-hi:spiked:p_head[:alpha_tail] [:skew=s]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) {
      auto rc = resolve_from_flags(run_flags);
      return finish_experiment(rc);
    }
    if (*sweep) {
      auto rc = resolve_from_flags(sweep_flags);
      if (rc.experiment.policy != PolicyKind::Laser) rc.experiment.policy = PolicyKind::Laser;
      return finish_experiment(rc);
    }
    if (*analyze) {
      const auto trace = replay_trace(trace_path);
      const auto w = workload_from_trace(trace);
      if (an_k < 1 || an_k > w.num_experts()) throw ConfigError("--k outside [1, num_experts]");
      RegimeParams rp{tau_dom, tau_plateau};
      try {
        rp.validate();
      } catch (const ParameterError& e) {
        throw ConfigError(e.what());
      }
      std::optional<Phase> ph;
      if (phase == "prefill") ph = Phase::Prefill;
      if (phase == "decode") ph = Phase::Decode;
      const auto stats = workload_layer_stats(w, an_k, rp, ph);
      const fs::path out = an_out.empty() ? fs::path(default_out_dir()) : fs::path(an_out);
      {
        auto os = io::open_out(out / "layerstats.csv");
        write_layer_stats_csv(os, stats);
      }
      std::printf("%-6s %8s %8s %8s %8s %8s %8s %8s\n", "layer", "mean_Mk", "H_p50", "single", "plateau", "smooth",
                  "tokens", "");
      for (const auto& s : stats)
        std::printf("%-6zu %8.4f %8.4f %8.3f %8.3f %8.3f %8zu\n", s.layer_index, s.mean_Mk, s.entropy_p50,
                    s.regime_fractions[0], s.regime_fractions[1], s.regime_fractions[2], s.token_count);
      if (suggest) {
        const auto bands = bands_spec.empty() ? thirds(w.num_layers()) : parse_layer_bands(bands_spec);
        LaserParams base;
        base.k = an_k;
        base.c = an_c.value_or(an_k);
        BandParams bp;
        try {
          bp = suggest_parameters(stats, bands, target_rate, base, t_fix);
          bp.validate(w.num_layers(), w.num_experts());
        } catch (const ParameterError& e) {
          throw ConfigError(e.what());
        }
        Json arr = Json::array();
        for (const auto& b : bp.bands)
          arr.push_back({{"layers", {b.layers.lo, b.layers.hi}},
                         {"eps_high", b.params.eps_high},
                         {"t_fix", b.params.t_fix},
                         {"c", b.params.c}});
        std::cout << Json{{"laser", {{"bands", arr}}}}.dump(2) << '\n';
      }
      return 0;
    }
    if (*gen) {
      SyntheticSpec spec;
      if (!gen_config.empty()) {
        const Json doc = load_config_file(gen_config);
        if (!doc.contains("workload") || !doc["workload"].contains("synthetic"))
          throw ConfigError(gen_config + ": no /workload/synthetic section");
        spec = parse_synthetic(doc["workload"]["synthetic"], doc.value("seed", std::uint64_t{1}));
      } else {
        spec.num_layers = g_layers;
        spec.num_experts = g_experts;
        spec.tokens_per_batch = g_tokens;
        spec.num_batches = g_batches;
        spec.rng_seed = g_seed;
        spec.phase = g_phase == "prefill" ? Phase::Prefill : Phase::Decode;
        for (const auto& b : g_bands) spec.bands.push_back(parse_band(b));
      }
      spec.validate();
      TraceWriter w(gen_out, synthetic_header(spec));
      for (std::size_t b = 0; b < spec.num_batches; ++b)
        for (std::size_t l = 0; l < spec.num_layers; ++l)
          for (const auto& r : generate_cell(spec, b, l)) w.append(r);
      w.finish();
      std::printf("wrote %zu records to %s\n", w.records_written(), gen_out.c_str());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
