#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ddsm/cnn.hpp"
#include "ddsm/error.hpp"
#include "ddsm/fnn.hpp"
#include "ddsm/io.hpp"
#include "ddsm/pipeline.hpp"

namespace ddsm {

using Json = nlohmann::json;

struct DataConfig {
  int scenario = 1;
  std::size_t train = 800;
  std::size_t test = 100;
  int patterns = 10;
  std::size_t grid = 64;
};

struct EvalConfig {
  std::vector<std::string> models{"fnn", "cnn"};
  std::vector<int> patterns{1, 10};
  std::vector<double> noise{0.0, 0.1, 0.2};
  bool dsm_baseline = false;
  double dsm_gamma = 1.0;
  std::size_t render = 4;  // heatmaps written for the first few test samples
  double threshold = 0.5;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  DataConfig data;
  FnnConfig fnn;
  CnnConfig cnn;
  EvalConfig eval;
  SolverConfig solver;

  void validate() const {
    if (data.scenario < 0 || data.scenario > 3) throw ConfigError("data.scenario must be in 0..3");
    if (data.train < 1) throw ConfigError("data.train must be positive");
    if (data.patterns < 1) throw ConfigError("data.patterns must be positive");
    if (data.grid < 8) throw ConfigError("data.grid must be at least 8");
    for (const auto& m : eval.models)
      if (m != "fnn" && m != "cnn") throw ConfigError("unknown model " + m);
    for (int n : eval.patterns)
      if (n < 1) throw ConfigError("eval.patterns entries must be positive");
    for (double d : eval.noise)
      if (!(d >= 0.0)) throw ConfigError("eval.noise entries must be non-negative");
    if (!(eval.dsm_gamma >= 0.0)) throw ConfigError("eval.dsm_gamma must be non-negative");
    FnnConfig f = fnn;
    f.patterns = data.patterns;
    f.validate();
    CnnConfig c = cnn;
    c.patterns = data.patterns;
    c.validate();
    c.validate_grid(CartesianGrid::square(data.grid));
    solver.validate();
  }

  // Extra checks for a full experiment run.
  void validate_run() const {
    validate();
    if (data.test < 1) throw ConfigError("data.test must be positive");
    for (int n : eval.patterns)
      if (n > data.patterns) throw ConfigError("eval.patterns entries must not exceed data.patterns");
  }

  DatasetSpec train_spec() const {
    DatasetSpec s;
    s.scenario = data.scenario;
    s.count = data.train;
    s.patterns = data.patterns;
    s.grid = CartesianGrid::square(data.grid);
    s.seed = seed;
    s.solver = solver;
    return s;
  }
  // Held-out records come from an independent master seed.
  DatasetSpec test_spec() const {
    DatasetSpec s = train_spec();
    s.count = data.test;
    s.seed = derive_seed(seed, 0, 2);
    return s;
  }
};

namespace detail {

// Reads `key` into `out` if present; the key is removed from `seen`.
template <class T>
void take(const Json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.erase(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
  }
}

inline std::set<std::string> keys(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> s;
  for (auto it = j.begin(); it != j.end(); ++it) s.insert(it.key());
  return s;
}

inline void reject_unknown(const std::set<std::string>& left, const std::string& where) {
  if (!left.empty()) throw ConfigError("unknown key '" + *left.begin() + "' in " + where);
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
  using detail::take;
  ExperimentConfig c;
  auto top = detail::keys(j, "config");
  take(j, "seed", c.seed, top);
  take(j, "output_dir", c.output_dir, top);
  if (j.contains("data")) {
    const Json& d = j["data"];
    auto s = detail::keys(d, "data");
    take(d, "scenario", c.data.scenario, s);
    take(d, "train", c.data.train, s);
    take(d, "test", c.data.test, s);
    take(d, "patterns", c.data.patterns, s);
    take(d, "grid", c.data.grid, s);
    detail::reject_unknown(s, "data");
  }
  top.erase("data");
  if (j.contains("fnn")) {
    const Json& f = j["fnn"];
    auto s = detail::keys(f, "fnn");
    take(f, "width", c.fnn.width, s);
    take(f, "blocks", c.fnn.blocks, s);
    take(f, "gaussian_blocks", c.fnn.gaussian_blocks, s);
    take(f, "bandwidth", c.fnn.bandwidth, s);
    take(f, "radial_gaussian", c.fnn.radial_gaussian, s);
    take(f, "alpha", c.fnn.alpha, s);
    take(f, "momentum", c.fnn.momentum, s);
    take(f, "batch_samples", c.fnn.batch_samples, s);
    take(f, "batch_points", c.fnn.batch_points, s);
    take(f, "iterations", c.fnn.iterations, s);
    take(f, "inside_weight", c.fnn.inside_weight, s);
    take(f, "scale_inputs", c.fnn.scale_inputs, s);
    detail::reject_unknown(s, "fnn");
  }
  top.erase("fnn");
  if (j.contains("cnn")) {
    const Json& n = j["cnn"];
    auto s = detail::keys(n, "cnn");
    take(n, "channels", c.cnn.channels, s);
    take(n, "alpha", c.cnn.alpha, s);
    take(n, "momentum", c.cnn.momentum, s);
    take(n, "batch_samples", c.cnn.batch_samples, s);
    take(n, "iterations", c.cnn.iterations, s);
    take(n, "scale_inputs", c.cnn.scale_inputs, s);
    detail::reject_unknown(s, "cnn");
  }
  top.erase("cnn");
  if (j.contains("eval")) {
    const Json& e = j["eval"];
    auto s = detail::keys(e, "eval");
    take(e, "models", c.eval.models, s);
    take(e, "patterns", c.eval.patterns, s);
    take(e, "noise", c.eval.noise, s);
    take(e, "dsm_baseline", c.eval.dsm_baseline, s);
    take(e, "dsm_gamma", c.eval.dsm_gamma, s);
    take(e, "render", c.eval.render, s);
    take(e, "threshold", c.eval.threshold, s);
    detail::reject_unknown(s, "eval");
  }
  top.erase("eval");
  if (j.contains("solver")) {
    const Json& v = j["solver"];
    auto s = detail::keys(v, "solver");
    take(v, "tolerance", c.solver.tolerance, s);
    take(v, "max_iterations", c.solver.max_iterations, s);
    detail::reject_unknown(s, "solver");
  }
  top.erase("solver");
  detail::reject_unknown(top, "config");
  c.fnn.patterns = c.data.patterns;
  c.cnn.patterns = c.data.patterns;
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config_text(read_file(path)); }

inline Json to_json(const ExperimentConfig& c) {
  return Json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"scenario", c.data.scenario},
        {"train", c.data.train},
        {"test", c.data.test},
        {"patterns", c.data.patterns},
        {"grid", c.data.grid}}},
      {"fnn",
       {{"width", c.fnn.width},
        {"blocks", c.fnn.blocks},
        {"gaussian_blocks", c.fnn.gaussian_blocks},
        {"bandwidth", c.fnn.bandwidth},
        {"radial_gaussian", c.fnn.radial_gaussian},
        {"alpha", c.fnn.alpha},
        {"momentum", c.fnn.momentum},
        {"batch_samples", c.fnn.batch_samples},
        {"batch_points", c.fnn.batch_points},
        {"iterations", c.fnn.iterations},
        {"inside_weight", c.fnn.inside_weight},
        {"scale_inputs", c.fnn.scale_inputs}}},
      {"cnn",
       {{"channels", c.cnn.channels},
        {"alpha", c.cnn.alpha},
        {"momentum", c.cnn.momentum},
        {"batch_samples", c.cnn.batch_samples},
        {"iterations", c.cnn.iterations},
        {"scale_inputs", c.cnn.scale_inputs}}},
      {"eval",
       {{"models", c.eval.models},
        {"patterns", c.eval.patterns},
        {"noise", c.eval.noise},
        {"dsm_baseline", c.eval.dsm_baseline},
        {"dsm_gamma", c.eval.dsm_gamma},
        {"render", c.eval.render},
        {"threshold", c.eval.threshold}}},
      {"solver", {{"tolerance", c.solver.tolerance}, {"max_iterations", c.solver.max_iterations}}}};
}

// Stable text form; its FNV-1a hash is the configuration digest.
inline std::string resolved_text(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }
inline std::string config_digest(const ExperimentConfig& c) { return fnv1a_hex(resolved_text(c)); }

}  // namespace ddsm
