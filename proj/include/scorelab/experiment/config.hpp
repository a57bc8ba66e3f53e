#pragma once

// Experiment configuration: YAML in, validated struct out, and a resolved
// JSON/YAML echo that re-validates to the same struct.

#include "scorelab/core.hpp"
#include "scorelab/ou_process.hpp"
#include "scorelab/sampler.hpp"
#include "scorelab/score_net.hpp"
#include "scorelab/targets.hpp"

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace scorelab::experiment {

using Json = nlohmann::ordered_json;

enum class ScoreMode { oracle, linear, mlp };
enum class BudgetMode { pooled, per_step };
enum class OutputFormat { csv, json };

inline std::string_view to_string(ScoreMode m) {
  switch (m) {
    case ScoreMode::oracle: return "oracle";
    case ScoreMode::linear: return "linear";
    case ScoreMode::mlp: return "mlp";
  }
  return "?";
}
inline ScoreMode parse_score_mode(std::string_view s) {
  if (s == "oracle") return ScoreMode::oracle;
  if (s == "linear") return ScoreMode::linear;
  if (s == "mlp") return ScoreMode::mlp;
  throw ConfigError("unknown score mode '" + std::string(s) + "' (oracle, linear, mlp)");
}
inline std::string_view to_string(BudgetMode m) { return m == BudgetMode::pooled ? "pooled" : "per-step"; }
inline BudgetMode parse_budget_mode(std::string_view s) {
  if (s == "pooled") return BudgetMode::pooled;
  if (s == "per-step" || s == "per_step") return BudgetMode::per_step;
  throw ConfigError("unknown budget mode '" + std::string(s) + "' (pooled, per-step)");
}
inline std::string_view to_string(OutputFormat f) { return f == OutputFormat::csv ? "csv" : "json"; }
inline OutputFormat parse_format(std::string_view s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "json") return OutputFormat::json;
  throw ConfigError("unknown format '" + std::string(s) + "' (csv, json)");
}

struct TargetConfig {
  std::vector<double> weights{0.4, 0.6};
  std::vector<std::vector<double>> means{{-1.0}, {1.5}};
  std::vector<std::vector<std::vector<double>>> covariances{{{0.25}}, {{0.49}}};
};

struct GridConfig {
  double horizon = 5.0;
  int steps = 100;
  double t0 = 0.01;
  double kappa_stop = 0.0;
  GridSpacing spacing = GridSpacing::uniform;
};

struct ModelConfig {
  ScoreMode mode = ScoreMode::mlp;
  int depth = 3;
  int width = 32;
  Activation activation = Activation::gelu;
  bool per_timestep = false;
};

struct TrainingConfig {
  double eta = 0.1;
  double beta_batch = 1.0;
  std::uint64_t budget = 10'000;
  BudgetMode budget_mode = BudgetMode::pooled;
  std::uint64_t eval_every = 50;
  std::uint64_t validation_n = 2000;
};

struct SamplerConfig {
  SamplerVariant variant = SamplerVariant::ddpm;
  InitKind init = InitKind::standard_normal;
  std::uint64_t n_samples = 20'000;
  bool zero_final_noise = true;
};

struct MetricsConfig {
  int bins = 0;  // 0 picks the default rule
};

struct DecomposeConfig {
  std::uint64_t mc_n = 10'000;
  int rows = 8;  // grid steps evaluated, evenly spaced over k
  double proxy_eta = 0.05;
  std::uint64_t proxy_iters = 2000;
  std::uint64_t proxy_factor = 100;  // theta_a proxy sample = factor * n
};

struct SweepConfig {
  std::vector<double> epsilons{0.4, 0.3, 0.2, 0.15, 0.1};
  double c_T = 2.0;
  double c_K = 16.0;
  double c_n = 256.0;
  int replicates = 3;
  ScoreMode score = ScoreMode::mlp;
  std::vector<double> t0_grid{0.1, 0.03, 0.01, 0.003, 0.001};
  double epsilon = 0.2;  // fixed epsilon of the t0 sweep
  double approx_floor = 0.0;  // additive TV allowance for the family's approximation error
};

struct VerifyConfig {
  std::vector<double> kappa_grid;  // empty in the struct means "use the default log grid"
  bool kappa_grid_set = false;
  double moment_tolerance = 1e-6;
  int massart_replicates = 2000;
  int growth_probes = 100;
};

struct Config {
  std::uint64_t seed = 0;
  int workers = 1;
  OutputFormat format = OutputFormat::csv;
  std::string checkpoint;  // model file for generate / decompose; empty = <out>/checkpoint.json
  TargetConfig target;
  GridConfig grid;
  ModelConfig model;
  TrainingConfig training;
  SamplerConfig sampler;
  MetricsConfig metrics;
  DecomposeConfig decompose;
  SweepConfig sweep;
  VerifyConfig verify;
};

inline std::vector<double> default_kappa_grid() {
  std::vector<double> g(60);
  for (int i = 0; i < 60; ++i) g[static_cast<std::size_t>(i)] = 0.01 * std::pow(5000.0, i / 59.0);
  return g;
}

inline std::vector<double> kappa_grid(const VerifyConfig& v) {
  return v.kappa_grid_set ? v.kappa_grid : default_kappa_grid();
}

inline GaussianMixture build_target(const TargetConfig& t) {
  const std::size_t m = t.weights.size();
  if (m == 0) throw ConfigError("target.weights: empty");
  if (t.means.size() != m || t.covariances.size() != m)
    throw ConfigError("target: weights, means and covariances differ in length");
  std::vector<Vec> means;
  std::vector<Mat> covs;
  const std::size_t d = t.means.front().size();
  if (d < 1 || d > static_cast<std::size_t>(kMaxDim)) throw ConfigError("target: dimension must be 1..3");
  for (std::size_t i = 0; i < m; ++i) {
    if (t.means[i].size() != d) throw ConfigError("target.means: mixed dimensions");
    means.push_back(Eigen::Map<const Vec>(t.means[i].data(), static_cast<Eigen::Index>(d)));
    if (t.covariances[i].size() != d) throw ConfigError("target.covariances: wrong row count");
    Mat c(d, d);
    for (std::size_t r = 0; r < d; ++r) {
      if (t.covariances[i][r].size() != d) throw ConfigError("target.covariances: wrong column count");
      for (std::size_t s = 0; s < d; ++s) c(r, s) = t.covariances[i][r][s];
    }
    covs.push_back(c);
  }
  try {
    return GaussianMixture(t.weights, std::move(means), std::move(covs));
  } catch (const Error& e) {
    throw ConfigError(std::string("target: ") + e.what());
  }
}

inline TimeGrid build_grid(const GridConfig& g) {
  return make_time_grid(g.horizon, g.steps, g.t0, g.kappa_stop, g.spacing);
}

inline MlpArchitecture build_architecture(const ModelConfig& m, int dim) {
  return {dim, m.depth, m.width, m.activation};
}

/// Throws ConfigError on the first violated constraint.
inline void validate(const Config& c) {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be > 0");
  };
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  const auto target = build_target(c.target);
  (void)build_grid(c.grid);
  if (c.model.depth < 1 || c.model.width < 1) throw ConfigError("model: depth and width must be >= 1");
  positive(c.training.eta, "training.eta");
  positive(c.training.beta_batch, "training.beta_batch");
  if (c.training.budget < 1) throw ConfigError("training.budget must be >= 1");
  if (c.training.eval_every < 1) throw ConfigError("training.eval_every must be >= 1");
  if (c.sampler.n_samples < 1) throw ConfigError("sampler.n_samples must be >= 1");
  if (c.metrics.bins < 0) throw ConfigError("metrics.bins must be >= 0");
  if (c.decompose.mc_n < 1000) throw ConfigError("decompose.mc_n must be >= 1000");
  if (c.decompose.rows < 1) throw ConfigError("decompose.rows must be >= 1");
  positive(c.decompose.proxy_eta, "decompose.proxy_eta");
  if (c.decompose.proxy_factor < 1) throw ConfigError("decompose.proxy_factor must be >= 1");
  if (c.sweep.epsilons.empty()) throw ConfigError("sweep.epsilons: empty grid");
  std::set<double> seen;
  for (double e : c.sweep.epsilons) {
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("sweep.epsilons: values must lie in (0, 1)");
    if (!seen.insert(e).second) throw ConfigError("sweep.epsilons: duplicate value");
  }
  positive(c.sweep.c_T, "sweep.c_T");
  positive(c.sweep.c_K, "sweep.c_K");
  positive(c.sweep.c_n, "sweep.c_n");
  if (c.sweep.replicates < 1) throw ConfigError("sweep.replicates must be >= 1");
  if (c.sweep.t0_grid.empty()) throw ConfigError("sweep.t0_grid: empty grid");
  for (double t : c.sweep.t0_grid)
    if (!(t > 0.0)) throw ConfigError("sweep.t0_grid: values must be > 0");
  if (!(c.sweep.epsilon > 0.0 && c.sweep.epsilon < 1.0)) throw ConfigError("sweep.epsilon must lie in (0, 1)");
  if (!(c.sweep.approx_floor >= 0.0 && c.sweep.approx_floor < 1.0))
    throw ConfigError("sweep.approx_floor must lie in [0, 1)");
  if (c.verify.kappa_grid_set && c.verify.kappa_grid.empty()) throw ConfigError("verify.kappa_grid: empty grid");
  for (double k : c.verify.kappa_grid)
    if (!(k > 0.0)) throw ConfigError("verify.kappa_grid: values must be > 0");
  positive(c.verify.moment_tolerance, "verify.moment_tolerance");
  if (c.verify.massart_replicates < 2) throw ConfigError("verify.massart_replicates must be >= 2");
  if (c.verify.growth_probes < 1) throw ConfigError("verify.growth_probes must be >= 1");
  if (c.model.mode == ScoreMode::linear && c.model.per_timestep == false)
    throw ConfigError("model: the linear family is time-local, set per_timestep: true");
  (void)target;
}

// ---------------------------------------------------------------------------
// YAML reading

namespace detail {

class Reader {
 public:
  Reader(const YAML::Node& node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError(path_ + ": expected a mapping");
  }

  template <class T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }

  template <class T, class Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    bool present = has(key);
    get(key, s);
    if (present) out = parse(s);
  }

  bool has(const char* key) const { return node_ && node_.IsMap() && node_[key]; }
  YAML::Node child(const char* key) {
    used_.insert(key);
    return node_ && node_.IsMap() ? node_[key] : YAML::Node();
  }

  /// Unknown keys are schema violations.
  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto k = kv.first.as<std::string>();
      if (!used_.count(k)) throw ConfigError(where(k.c_str()) + ": unknown key");
    }
  }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  YAML::Node node_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace detail

inline Config parse_config(const YAML::Node& root) {
  Config c;
  detail::Reader r(root, "");
  r.get("seed", c.seed);
  r.get("workers", c.workers);
  r.get_enum("format", c.format, parse_format);
  r.get("checkpoint", c.checkpoint);
  {
    detail::Reader s(r.child("target"), "target");
    s.get("weights", c.target.weights);
    s.get("means", c.target.means);
    s.get("covariances", c.target.covariances);
    s.finish();
  }
  {
    detail::Reader s(r.child("grid"), "grid");
    s.get("horizon", c.grid.horizon);
    s.get("steps", c.grid.steps);
    s.get("t0", c.grid.t0);
    s.get("kappa_stop", c.grid.kappa_stop);
    s.get_enum("spacing", c.grid.spacing, parse_grid_spacing);
    s.finish();
  }
  {
    detail::Reader s(r.child("model"), "model");
    s.get_enum("mode", c.model.mode, parse_score_mode);
    s.get("depth", c.model.depth);
    s.get("width", c.model.width);
    s.get_enum("activation", c.model.activation, parse_activation);
    s.get("per_timestep", c.model.per_timestep);
    s.finish();
  }
  {
    detail::Reader s(r.child("training"), "training");
    s.get("eta", c.training.eta);
    s.get("beta_batch", c.training.beta_batch);
    // negative budgets would wrap in an unsigned read
    if (s.has("budget")) {
      long long b = 0;
      s.get("budget", b);
      if (b < 1) throw ConfigError("training.budget must be >= 1");
      c.training.budget = static_cast<std::uint64_t>(b);
    }
    s.get_enum("budget_mode", c.training.budget_mode, parse_budget_mode);
    s.get("eval_every", c.training.eval_every);
    s.get("validation_n", c.training.validation_n);
    s.finish();
  }
  {
    detail::Reader s(r.child("sampler"), "sampler");
    s.get_enum("variant", c.sampler.variant, parse_sampler_variant);
    s.get_enum("init", c.sampler.init, parse_init_kind);
    s.get("n_samples", c.sampler.n_samples);
    s.get("zero_final_noise", c.sampler.zero_final_noise);
    s.finish();
  }
  {
    detail::Reader s(r.child("metrics"), "metrics");
    s.get("bins", c.metrics.bins);
    s.finish();
  }
  {
    detail::Reader s(r.child("decompose"), "decompose");
    s.get("mc_n", c.decompose.mc_n);
    s.get("rows", c.decompose.rows);
    s.get("proxy_eta", c.decompose.proxy_eta);
    s.get("proxy_iters", c.decompose.proxy_iters);
    s.get("proxy_factor", c.decompose.proxy_factor);
    s.finish();
  }
  {
    detail::Reader s(r.child("sweep"), "sweep");
    s.get("epsilons", c.sweep.epsilons);
    s.get("c_T", c.sweep.c_T);
    s.get("c_K", c.sweep.c_K);
    s.get("c_n", c.sweep.c_n);
    s.get("replicates", c.sweep.replicates);
    s.get_enum("score", c.sweep.score, parse_score_mode);
    s.get("t0_grid", c.sweep.t0_grid);
    s.get("epsilon", c.sweep.epsilon);
    s.get("approx_floor", c.sweep.approx_floor);
    s.finish();
  }
  {
    detail::Reader s(r.child("verify"), "verify");
    c.verify.kappa_grid_set = s.has("kappa_grid");
    s.get("kappa_grid", c.verify.kappa_grid);
    s.get("moment_tolerance", c.verify.moment_tolerance);
    s.get("massart_replicates", c.verify.massart_replicates);
    s.get("growth_probes", c.verify.growth_probes);
    s.finish();
  }
  r.finish();
  validate(c);
  return c;
}

inline Config parse_config_text(const std::string& text) {
  try {
    return parse_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Echo

inline Json to_json(const Config& c) {
  Json j;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["format"] = to_string(c.format);
  j["checkpoint"] = c.checkpoint;
  j["target"] = {{"weights", c.target.weights}, {"means", c.target.means}, {"covariances", c.target.covariances}};
  j["grid"] = {{"horizon", c.grid.horizon},
               {"steps", c.grid.steps},
               {"t0", c.grid.t0},
               {"kappa_stop", c.grid.kappa_stop},
               {"spacing", to_string(c.grid.spacing)}};
  j["model"] = {{"mode", to_string(c.model.mode)},
                {"depth", c.model.depth},
                {"width", c.model.width},
                {"activation", to_string(c.model.activation)},
                {"per_timestep", c.model.per_timestep}};
  j["training"] = {{"eta", c.training.eta},
                   {"beta_batch", c.training.beta_batch},
                   {"budget", c.training.budget},
                   {"budget_mode", to_string(c.training.budget_mode)},
                   {"eval_every", c.training.eval_every},
                   {"validation_n", c.training.validation_n}};
  j["sampler"] = {{"variant", to_string(c.sampler.variant)},
                  {"init", to_string(c.sampler.init)},
                  {"n_samples", c.sampler.n_samples},
                  {"zero_final_noise", c.sampler.zero_final_noise}};
  j["metrics"] = {{"bins", c.metrics.bins}};
  j["decompose"] = {{"mc_n", c.decompose.mc_n},
                    {"rows", c.decompose.rows},
                    {"proxy_eta", c.decompose.proxy_eta},
                    {"proxy_iters", c.decompose.proxy_iters},
                    {"proxy_factor", c.decompose.proxy_factor}};
  j["sweep"] = {{"epsilons", c.sweep.epsilons}, {"c_T", c.sweep.c_T},
                {"c_K", c.sweep.c_K},           {"c_n", c.sweep.c_n},
                {"replicates", c.sweep.replicates}, {"score", to_string(c.sweep.score)},
                {"t0_grid", c.sweep.t0_grid},   {"epsilon", c.sweep.epsilon},
                {"approx_floor", c.sweep.approx_floor}};
  j["verify"] = {{"kappa_grid", kappa_grid(c.verify)},
                 {"moment_tolerance", c.verify.moment_tolerance},
                 {"massart_replicates", c.verify.massart_replicates},
                 {"growth_probes", c.verify.growth_probes}};
  return j;
}

namespace detail {

inline void emit(YAML::Emitter& out, const Json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (auto it = j.begin(); it != j.end(); ++it) {
      out << YAML::Key << it.key() << YAML::Value;
      emit(out, it.value());
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : j) emit(out, v);
    out << YAML::EndSeq;
  } else if (j.is_string()) {
    out << j.get<std::string>();
  } else if (j.is_boolean()) {
    out << j.get<bool>();
  } else if (j.is_number_unsigned()) {
    out << j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    out << j.get<std::int64_t>();
  } else {
    // shortest text that parses back to the same double
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, j.get<double>());
    out << std::string(buf, r.ptr);
  }
}

}  // namespace detail

/// Resolved config as YAML; parse_config_text(to_yaml(c)) reproduces c.
inline std::string to_yaml(const Config& c) {
  YAML::Emitter out;
  detail::emit(out, to_json(c));
  return std::string(out.c_str()) + "\n";
}

}  // namespace scorelab::experiment
