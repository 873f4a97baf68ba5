// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moelab/error.hpp"
#include "moelab/experiment.hpp"
#include "moelab/presets.hpp"

namespace moelab {

using Json = nlohmann::ordered_json;

namespace config_detail {

// Typed access to one JSON object with unknown-key rejection. Every
// diagnostic names the JSON pointer of the offending field.
class Obj {
 public:
  Obj(const Json& j, std::string path, std::initializer_list<std::string_view> allowed) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + ": expected an object");
    for (const auto& [key, _] : j.items())
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        throw ConfigError(where() + ": unknown key '" + key + "'");
  }

  bool has(std::string_view key) const { return j_.contains(key); }
  const Json& raw(std::string_view key) const { return j_.at(std::string(key)); }
  std::string at(std::string_view key) const { return path_ + "/" + std::string(key); }

  std::uint64_t uint(std::string_view key) const {
    const auto& v = raw(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
      throw ConfigError(at(key) + ": expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }
  std::uint64_t uint(std::string_view key, std::uint64_t dflt) const { return has(key) ? uint(key) : dflt; }

  double num(std::string_view key) const {
    const auto& v = raw(key);
    if (!v.is_number()) throw ConfigError(at(key) + ": expected a number");
    return v.get<double>();
  }
  double num(std::string_view key, double dflt) const { return has(key) ? num(key) : dflt; }

  std::string str(std::string_view key) const {
    const auto& v = raw(key);
    if (!v.is_string()) throw ConfigError(at(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::string str(std::string_view key, std::string dflt) const { return has(key) ? str(key) : dflt; }

  bool boolean(std::string_view key, bool dflt) const {
    if (!has(key)) return dflt;
    const auto& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(at(key) + ": expected true or false");
    return v.get<bool>();
  }

  std::string where() const { return path_.empty() ? "/" : path_; }

 private:
  const Json& j_;
  std::string path_;
};

inline LayerRange parse_range(const Json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_unsigned() || !v[1].is_number_unsigned())
    throw ConfigError(path + ": expected [lo, hi] layer indices");
  return {v[0].get<std::size_t>(), v[1].get<std::size_t>()};
}

inline TrimMode parse_trim(const std::string& s, const std::string& path) {
  if (s == "top") return TrimMode::Top;
  if (s == "random") return TrimMode::Random;
  throw ConfigError(path + ": trim must be 'top' or 'random'");
}

inline std::filesystem::path resolve_path(const std::string& p, const std::filesystem::path& base) {
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return std::filesystem::weakly_canonical(path);
}

inline std::vector<double> read_numbers(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ConfigError(p.string() + ": not a number: '" + tok + "'");
      }
    }
  }
  return out;
}

}  // namespace config_detail

/// Placement CSV: one row per GPU, one column per expert; '#' starts a comment.
inline PlacementMatrix read_placement_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read placement " + p.string());
  std::vector<double> data;
  std::size_t rows = 0, cols = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError(p.string() + ":" + std::to_string(lineno) + ": not a number: '" + cell + "'");
      }
    }
    if (cols == 0) cols = row.size();
    if (row.size() != cols)
      throw ConfigError(p.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(cols) + " columns");
    data.insert(data.end(), row.begin(), row.end());
    ++rows;
  }
  return PlacementMatrix(rows, cols, std::move(data));
}

/// Parses JSON text; syntax errors report line and column.
inline Json parse_config_text(const std::string& text, const std::string& origin = "config") {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
}

inline Json load_config_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read config " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), p.string());
}

// Command-line overrides; applied on top of the file, last one wins.
struct Overrides {
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> policy;
  std::optional<std::vector<std::size_t>> c_list;
  std::optional<std::string> preset;
  std::optional<std::string> weights;    // "uniform" | "flops:<path>"
  std::optional<std::string> placement;  // CSV path
  std::optional<std::string> load_reset; // "batch" | "cumulative"
};

inline void apply_overrides(Json& doc, const Overrides& o) {
  if (!doc.is_object()) throw ConfigError("/: expected an object");
  if (o.out_dir) doc["out_dir"] = *o.out_dir;
  if (o.seed) doc["seed"] = *o.seed;
  if (o.policy) doc["policy"] = *o.policy;
  if (o.c_list) doc["sweep"] = *o.c_list;
  if (o.preset) {
    doc["preset"] = *o.preset;
    if (doc.contains("laser") && doc["laser"].is_object()) doc["laser"].erase("bands");
  }
  if (o.weights) doc["weights"] = *o.weights;
  if (o.placement) doc["placement"] = *o.placement;
  if (o.load_reset) doc["load_reset"] = *o.load_reset;
}

// A config resolved against its workload: everything explicit, presets
// expanded, paths absolute.
struct ResolvedConfig {
  ExperimentConfig experiment;
  Workload workload;
  Json effective;  // re-runnable document equivalent to `experiment`
  std::optional<std::filesystem::path> out_dir;
  std::vector<std::string> warnings;
};

inline SyntheticSpec parse_synthetic(const Json& j, std::uint64_t seed) {
  using config_detail::Obj;
  Obj o(j, "/workload/synthetic",
        {"num_layers", "num_experts", "tokens_per_batch", "num_batches", "phase", "bands"});
  SyntheticSpec s;
  s.num_layers = o.uint("num_layers");
  s.num_experts = o.uint("num_experts");
  s.tokens_per_batch = o.uint("tokens_per_batch", 512);
  s.num_batches = o.uint("num_batches", 1);
  const auto phase = o.str("phase", "decode");
  if (phase == "decode") s.phase = Phase::Decode;
  else if (phase == "prefill") s.phase = Phase::Prefill;
  else throw ConfigError(o.at("phase") + ": expected 'prefill' or 'decode'");
  s.rng_seed = seed;
  if (o.has("bands")) {
    const auto& arr = o.raw("bands");
    if (!arr.is_array()) throw ConfigError(o.at("bands") + ": expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string path = o.at("bands") + "/" + std::to_string(i);
      Obj b(arr[i], path, {"layers", "dirichlet", "spiked", "hot_skew"});
      SyntheticBand band;
      band.layers = config_detail::parse_range(b.raw("layers"), b.at("layers"));
      band.generator.hot_skew = b.num("hot_skew", 0.0);
      if (b.has("dirichlet") == b.has("spiked"))
        throw ConfigError(path + ": exactly one of 'dirichlet' or 'spiked' is required");
      if (b.has("dirichlet")) {
        Obj d(b.raw("dirichlet"), b.at("dirichlet"), {"alpha"});
        band.generator.kind = DirichletGen{d.num("alpha")};
      } else {
        Obj d(b.raw("spiked"), b.at("spiked"), {"p_head", "alpha_tail"});
        band.generator.kind = SpikedGen{d.num("p_head"), d.num("alpha_tail", 1.0)};
      }
      s.bands.push_back(band);
    }
  }
  return s;
}

inline Json synthetic_to_json(const SyntheticSpec& s) {
  Json bands = Json::array();
  for (const auto& b : s.bands) {
    Json bj = {{"layers", {b.layers.lo, b.layers.hi}}};
    if (const auto* d = std::get_if<DirichletGen>(&b.generator.kind)) {
      bj["dirichlet"] = {{"alpha", d->alpha}};
    } else {
      const auto& sp = std::get<SpikedGen>(b.generator.kind);
      bj["spiked"] = {{"p_head", sp.p_head}, {"alpha_tail", sp.alpha_tail}};
    }
    bj["hot_skew"] = b.generator.hot_skew;
    bands.push_back(bj);
  }
  return {{"num_layers", s.num_layers},     {"num_experts", s.num_experts},
          {"tokens_per_batch", s.tokens_per_batch}, {"num_batches", s.num_batches},
          {"phase", to_string(s.phase)},     {"bands", bands}};
}

/// Seed for LASER's random trimming, kept apart from the workload stream.
inline std::uint64_t trim_seed(std::uint64_t seed) { return mix_seed(seed, 0x7472696d); }

/// Validates the document and binds it to its workload.
inline ResolvedConfig resolve_config(const Json& doc, const std::filesystem::path& base_dir = ".") {
  using config_detail::Obj;
  Obj top(doc, "",
          {"preset", "seed", "k", "policy", "workload", "laser", "sweep", "baselines", "weights", "placement", "perf",
           "load_reset", "regime", "out_dir"});
  ResolvedConfig rc;
  auto& cfg = rc.experiment;
  Json eff = Json::object();

  const std::uint64_t seed = top.uint("seed", 1);
  eff["seed"] = seed;

  const Preset* preset = nullptr;
  if (top.has("preset")) {
    const auto name = top.str("preset");
    preset = find_preset(name);
    if (!preset) {
      std::string known;
      for (const auto& p : kPresets) known += (known.empty() ? "" : ", ") + std::string(p.name);
      throw ConfigError("/preset: unknown preset '" + name + "' (known: " + known + ")");
    }
  }

  // Workload.
  if (!top.has("workload")) throw ConfigError("/workload: required");
  {
    Obj w(top.raw("workload"), "/workload", {"trace", "synthetic"});
    if (w.has("trace") == w.has("synthetic"))
      throw ConfigError("/workload: exactly one of 'trace' or 'synthetic' is required");
    if (w.has("trace")) {
      const auto path = config_detail::resolve_path(w.str("trace"), base_dir);
      cfg.workload = path;
      eff["workload"] = {{"trace", path.string()}};
    } else {
      auto spec = parse_synthetic(w.raw("synthetic"), seed);
      spec.validate();
      cfg.workload = spec;
      eff["workload"] = {{"synthetic", synthetic_to_json(spec)}};
    }
  }
  rc.workload = load_workload(cfg);
  const std::size_t n = rc.workload.num_experts();
  const std::size_t num_layers = rc.workload.num_layers();

  cfg.k = top.uint("k", preset ? preset->k : 2);
  if (cfg.k < 1 || cfg.k > n)
    throw ConfigError("/k: k=" + std::to_string(cfg.k) + " outside [1, " + std::to_string(n) + "]");
  eff["k"] = cfg.k;

  const auto policy = top.str("policy", "laser");
  if (policy == "vanilla") cfg.policy = PolicyKind::Vanilla;
  else if (policy == "load_only") cfg.policy = PolicyKind::LoadOnly;
  else if (policy == "laser") cfg.policy = PolicyKind::Laser;
  else throw ConfigError("/policy: expected 'vanilla', 'load_only' or 'laser', got '" + policy + "'");
  eff["policy"] = policy;

  // LASER parameters.
  {
    static const Json kEmpty = Json::object();
    const Json& lj = top.has("laser") ? top.raw("laser") : kEmpty;
    Obj l(lj, "/laser", {"c", "trim", "t_fix", "eps_high", "bands"});
    LaserParams base;
    base.k = cfg.k;
    base.c = l.uint("c", cfg.k);
    base.trim = config_detail::parse_trim(l.str("trim", "top"), l.at("trim"));
    base.t_fix = l.num("t_fix", 0.6);
    base.eps_high = l.num("eps_high", 0.75);
    base.rng_seed = trim_seed(seed);
    if (l.has("bands")) {
      const auto& arr = l.raw("bands");
      if (!arr.is_array()) throw ConfigError(l.at("bands") + ": expected an array");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string path = l.at("bands") + "/" + std::to_string(i);
        Obj b(arr[i], path, {"layers", "eps_high", "t_fix", "c", "trim"});
        Band band{config_detail::parse_range(b.raw("layers"), b.at("layers")), base};
        band.params.eps_high = b.num("eps_high", base.eps_high);
        band.params.t_fix = b.num("t_fix", base.t_fix);
        band.params.c = b.uint("c", base.c);
        if (b.has("trim")) band.params.trim = config_detail::parse_trim(b.str("trim"), b.at("trim"));
        cfg.bands.bands.push_back(band);
      }
    } else if (preset) {
      cfg.bands = preset_bands(*preset, num_layers, base);
    } else {
      cfg.bands.bands.push_back({{0, num_layers - 1}, base});
    }
    cfg.bands.validate(num_layers, n);
    Json bands = Json::array();
    for (const auto& b : cfg.bands.bands)
      bands.push_back({{"layers", {b.layers.lo, b.layers.hi}},
                       {"eps_high", b.params.eps_high},
                       {"t_fix", b.params.t_fix},
                       {"c", b.params.c},
                       {"trim", to_string(b.params.trim)}});
    eff["laser"] = {{"bands", bands}};
  }

  if (top.has("sweep")) {
    const auto& arr = top.raw("sweep");
    if (!arr.is_array()) throw ConfigError("/sweep: expected an array of c values");
    std::vector<std::size_t> seen;
    for (const auto& v : arr) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw ConfigError("/sweep: c values must be nonnegative integers");
      const auto c = v.get<std::size_t>();
      if (c < cfg.k || c > n)
        throw ConfigError("/sweep: c=" + std::to_string(c) + " outside [k, n] = [" + std::to_string(cfg.k) + ", " +
                          std::to_string(n) + "]");
      if (std::find(seen.begin(), seen.end(), c) != seen.end()) {
        rc.warnings.push_back("duplicate sweep value c=" + std::to_string(c) + " ignored");
        continue;
      }
      seen.push_back(c);
    }
    cfg.sweep = seen;
    eff["sweep"] = seen;
  }

  cfg.baselines = top.boolean("baselines", true);
  eff["baselines"] = cfg.baselines;

  if (top.has("weights")) {
    const auto& wj = top.raw("weights");
    if (wj.is_string()) {
      const auto s = wj.get<std::string>();
      if (s.rfind("flops:", 0) == 0) {
        cfg.settings.flops = config_detail::read_numbers(config_detail::resolve_path(s.substr(6), base_dir));
      } else if (s != "uniform") {
        throw ConfigError("/weights: expected 'uniform', 'flops:<path>' or {\"flops\": [...]}");
      }
    } else {
      Obj w(wj, "/weights", {"flops"});
      const auto& arr = w.raw("flops");
      if (!arr.is_array()) throw ConfigError("/weights/flops: expected an array");
      std::vector<double> f;
      for (const auto& v : arr) {
        if (!v.is_number()) throw ConfigError("/weights/flops: expected numbers");
        f.push_back(v.get<double>());
      }
      cfg.settings.flops = f;
    }
    if (cfg.settings.flops) {
      try {
        make_weights(cfg.settings, num_layers);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("/weights: ") + e.what());
      }
    }
  }
  eff["weights"] = cfg.settings.flops ? Json{{"flops", *cfg.settings.flops}} : Json("uniform");

  if (top.has("placement")) {
    const auto& pj = top.raw("placement");
    if (pj.is_string()) {
      cfg.settings.placement = read_placement_csv(config_detail::resolve_path(pj.get<std::string>(), base_dir));
    } else if (pj.is_array() && !pj.empty()) {
      std::vector<double> data;
      std::size_t cols = 0;
      for (const auto& row : pj) {
        if (!row.is_array()) throw ConfigError("/placement: expected an array of rows");
        if (cols == 0) cols = row.size();
        if (row.size() != cols) throw ConfigError("/placement: ragged rows");
        for (const auto& v : row) {
          if (!v.is_number()) throw ConfigError("/placement: expected numbers");
          data.push_back(v.get<double>());
        }
      }
      try {
        cfg.settings.placement = PlacementMatrix(pj.size(), cols, std::move(data));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("/placement: ") + e.what());
      }
    } else {
      throw ConfigError("/placement: expected a CSV path or a matrix");
    }
    if (cfg.settings.placement->experts() != n)
      throw ConfigError("/placement: matrix has " + std::to_string(cfg.settings.placement->experts()) +
                        " expert columns, workload has " + std::to_string(n));
    Json m = Json::array();
    for (std::size_t g = 0; g < cfg.settings.placement->gpus(); ++g) {
      Json row = Json::array();
      for (std::size_t e = 0; e < n; ++e) row.push_back(cfg.settings.placement->at(g, e));
      m.push_back(row);
    }
    eff["placement"] = m;
  }

  if (top.has("perf")) {
    Obj p(top.raw("perf"), "/perf", {"gamma", "t_comm", "t_offload", "gpu_price", "gpu_count"});
    PerfParams pp;
    pp.gamma = p.num("gamma", 1.0);
    pp.t_comm = p.num("t_comm", 0.0);
    pp.t_offload = p.num("t_offload", 0.0);
    pp.gpu_price = p.num("gpu_price", 0.0);
    pp.gpu_count = p.uint("gpu_count", 1);
    pp.validate();
    cfg.perf = pp;
    eff["perf"] = {{"gamma", pp.gamma},
                   {"t_comm", pp.t_comm},
                   {"t_offload", pp.t_offload},
                   {"gpu_price", pp.gpu_price},
                   {"gpu_count", pp.gpu_count}};
  }

  const auto reset = top.str("load_reset", "batch");
  if (reset == "batch") cfg.settings.load_reset = LoadReset::PerBatch;
  else if (reset == "cumulative") cfg.settings.load_reset = LoadReset::Cumulative;
  else throw ConfigError("/load_reset: expected 'batch' or 'cumulative'");
  eff["load_reset"] = reset;

  {
    static const Json kEmpty = Json::object();
    Obj r(top.has("regime") ? top.raw("regime") : kEmpty, "/regime", {"tau_dom", "tau_plateau"});
    cfg.regime.tau_dom = r.num("tau_dom", 0.6);
    cfg.regime.tau_plateau = r.num("tau_plateau", 0.8);
    try {
      cfg.regime.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("/regime: ") + e.what());
    }
    eff["regime"] = {{"tau_dom", cfg.regime.tau_dom}, {"tau_plateau", cfg.regime.tau_plateau}};
  }

  if (top.has("out_dir")) rc.out_dir = top.str("out_dir");
  rc.effective = std::move(eff);
  return rc;
}

}  // namespace moelab
