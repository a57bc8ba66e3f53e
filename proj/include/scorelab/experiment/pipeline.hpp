#pragma once

// The stages behind the CLI: train, generate, decompose, the two scaling
// sweeps and the lemma suite. Every stage is a pure function of the config
// and a seed; the CLI only adds file output.

#include "scorelab/decomposition.hpp"
#include "scorelab/experiment/io.hpp"
#include "scorelab/lemma_oracles.hpp"
#include "scorelab/metrics.hpp"
#include "scorelab/sampler.hpp"
#include "scorelab/training.hpp"

#include <atomic>
#include <bit>
#include <map>

namespace scorelab::experiment {

inline constexpr std::uint64_t kParamInitStream = 0x11;
inline constexpr std::uint64_t kSgdStream = 0x22;
inline constexpr std::uint64_t kValidationStream = 0x33;
inline constexpr std::uint64_t kGenerateStream = 0x44;
inline constexpr std::uint64_t kReferenceStream = 0x55;
inline constexpr std::uint64_t kDecomposeStream = 0x66;
inline constexpr std::uint64_t kVerifyStream = 0x77;

/// Grid times at which the reverse sampler evaluates the score: t_1 .. t_K.
inline std::vector<double> score_times(const TimeGrid& g) { return {g.times().begin() + 1, g.times().end()}; }

/// Per-step sample budgets. Pooled splits n evenly over the K steps;
/// per-step gives step k the share n * sigma_k^4 with sigma_k^2 = 1 - e^{-2 t_k}.
inline std::vector<std::uint64_t> step_budgets(const TrainingConfig& c, const TimeGrid& grid) {
  const auto times = score_times(grid);
  std::vector<std::uint64_t> out(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    if (c.budget_mode == BudgetMode::pooled) {
      out[k] = std::max<std::uint64_t>(1, c.budget / times.size());
    } else {
      const double s2 = ou_marginal_params(times[k]).sigma_sq;
      out[k] = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(static_cast<double>(c.budget) * s2 * s2)));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainedStage {
  std::string name;
  SgdTrace trace;
};

struct TrainOutcome {
  Checkpoint checkpoint;
  std::vector<TrainedStage> stages;
  Table summary;
};

namespace detail {

inline Table train_summary_table() {
  Table t;
  t.columns = {"stage", "t", "budget", "samples_used", "iterations", "final_loss", "population_loss", "delta",
               "erm_population_loss", "loss_ratio", "lstar_source"};
  return t;
}

/// Denoising-loss floor: the exact denoiser -sigma_t * true score on the
/// same validation draws.
inline double oracle_denoiser_loss(const GaussianMixture& target, std::span<const ForwardDraw> val) {
  std::vector<double> v(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    const double s = ou_marginal_params(val[i].t).sigma();
    v[i] = (val[i].noise + s * true_score(target, val[i].x, val[i].t)).squaredNorm();
  }
  return pairwise_sum(v) / static_cast<double>(std::max<std::size_t>(1, v.size()));
}

inline std::string step_name(std::size_t k) { return "k=" + std::to_string(k); }

struct LinearStep {
  LinearScoreModel model;
  SgdTrace trace;
  std::vector<ForwardDraw> draws;
};

inline LinearStep train_linear_step(const Config& c, const GaussianMixture& target, double t, std::uint64_t n,
                                    std::uint64_t seed) {
  LinearScoreProblem prob(target, t);
  LinearStep out;
  prob.record_draws(&out.draws);
  SgdConfig sc;
  sc.eta = c.training.eta;
  sc.beta_batch = c.training.beta_batch;
  sc.budget = n;
  sc.seed = derive_seed(seed, kSgdStream);
  sc.smoothness_hat = prob.hessian_max_eig();
  sc.eval_every = c.training.eval_every;
  const int d = target.dim();
  auto res = sgd_pl_run(sc, prob, LinearScoreModel::zeros(d).flat());
  out.model = LinearScoreModel::from_flat(res.params, d);
  out.trace = std::move(res.trace);
  prob.record_draws(nullptr);
  return out;
}

inline MlpScoreModel train_network(const Config& c, const GaussianMixture& target, std::vector<double> times,
                                   std::vector<double> weights, std::uint64_t n, std::uint64_t seed,
                                   SgdTrace& trace_out) {
  const auto arch = build_architecture(c.model, target.dim());
  MlpDenoisingObjective obj(arch, target, std::move(times), c.training.validation_n,
                            derive_seed(seed, kValidationStream), c.workers, std::move(weights));
  obj.set_optimal_loss_proxy(oracle_denoiser_loss(target, obj.validation()));
  Rng init_rng = make_stream(seed, kParamInitStream);
  const auto init = MlpScoreModel::init(arch, init_rng);
  SgdConfig sc;
  sc.eta = c.training.eta;
  sc.beta_batch = c.training.beta_batch;
  sc.budget = n;
  sc.seed = derive_seed(seed, kSgdStream);
  sc.eval_every = c.training.eval_every;
  try {
    auto res = sgd_pl_run(sc, obj, init.params());
    res.trace.lstar_source = "oracle-denoiser";
    trace_out = std::move(res.trace);
    return MlpScoreModel(arch, std::move(res.params));
  } catch (const SgdDivergence& e) {
    trace_out = e.trace();
    throw;
  }
}

inline void add_summary_row(Table& t, const std::string& stage, double time, std::uint64_t budget,
                            const SgdTrace& tr, double erm_loss = std::numeric_limits<double>::quiet_NaN(),
                            double ratio = std::numeric_limits<double>::quiet_NaN()) {
  const SgdRecord last = tr.records.empty() ? SgdRecord{} : tr.records.back();
  t.add({stage, time, static_cast<double>(budget), static_cast<double>(tr.samples_used()),
         static_cast<double>(tr.records.size()), last.loss, last.population_loss, last.delta, erm_loss, ratio,
         tr.lstar_source});
}

}  // namespace detail

/// Oracle mode trains nothing. Linear mode fits one model per score time by
/// SGD and reports its population loss next to that of the closed-form ERM
/// on the same draws. Network mode trains one shared network, or one per
/// step with per_timestep set. On divergence the partial traces are kept in
/// `partial` before the exception propagates.
inline TrainOutcome train(const Config& c, std::uint64_t seed, TrainOutcome* partial = nullptr) {
  const auto target = build_target(c.target);
  const auto grid = build_grid(c.grid);
  const auto times = score_times(grid);
  const auto budgets = step_budgets(c.training, grid);
  TrainOutcome out;
  out.checkpoint.mode = c.model.mode;
  out.checkpoint.seed = seed;
  out.summary = detail::train_summary_table();
  auto keep = [&] {
    if (partial) *partial = out;
  };

  if (c.model.mode == ScoreMode::oracle) return out;

  if (c.model.mode == ScoreMode::linear) {
    out.checkpoint.times = times;
    for (std::size_t k = 0; k < times.size(); ++k) {
      detail::LinearStep step;
      try {
        step = detail::train_linear_step(c, target, times[k], budgets[k], derive_seed(seed, k));
      } catch (const SgdDivergence& e) {
        out.stages.push_back({detail::step_name(k), e.trace()});
        keep();
        throw;
      }
      // exact population losses E||s - grad log p_t||^2 (up to the family floor)
      const LinearScoreProblem prob(target, times[k]);
      const double sgd_loss = prob.population_loss(step.model.flat());
      double erm_loss = std::numeric_limits<double>::quiet_NaN();
      if (step.draws.size() >= static_cast<std::size_t>(target.dim()) + 1) {
        try {
          erm_loss = prob.population_loss(closed_form_minimizers(target, times[k], step.draws).theta_b.flat());
        } catch (const RankError&) {
        }
      }
      detail::add_summary_row(out.summary, detail::step_name(k), times[k], budgets[k], step.trace, erm_loss,
                              sgd_loss / erm_loss);
      out.checkpoint.linear_models.push_back(step.model);
      out.stages.push_back({detail::step_name(k), std::move(step.trace)});
    }
    return out;
  }

  if (!c.model.per_timestep) {
    std::vector<double> weights;
    std::uint64_t total = c.training.budget;
    if (c.training.budget_mode == BudgetMode::per_step) {
      total = 0;
      for (auto b : budgets) {
        total += b;
        weights.push_back(static_cast<double>(b));
      }
    }
    SgdTrace tr;
    try {
      out.checkpoint.networks.push_back(detail::train_network(c, target, times, weights, total, seed, tr));
    } catch (const SgdDivergence&) {
      out.stages.push_back({"shared", tr});
      keep();
      throw;
    }
    detail::add_summary_row(out.summary, "shared", std::numeric_limits<double>::quiet_NaN(), total, tr);
    out.stages.push_back({"shared", std::move(tr)});
    return out;
  }

  out.checkpoint.times = times;
  for (std::size_t k = 0; k < times.size(); ++k) {
    SgdTrace tr;
    try {
      out.checkpoint.networks.push_back(
          detail::train_network(c, target, {times[k]}, {}, budgets[k], derive_seed(seed, k), tr));
    } catch (const SgdDivergence&) {
      out.stages.push_back({detail::step_name(k), tr});
      keep();
      throw;
    }
    detail::add_summary_row(out.summary, detail::step_name(k), times[k], budgets[k], tr);
    out.stages.push_back({detail::step_name(k), std::move(tr)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Score dispatch

inline void check_compatible(const Checkpoint& ck, const GaussianMixture& target, const TimeGrid& grid) {
  if (ck.mode == ScoreMode::mlp && ck.networks.empty()) throw ConfigError("checkpoint: no network parameters");
  if (ck.mode == ScoreMode::linear && ck.linear_models.empty()) throw ConfigError("checkpoint: no linear models");
  for (const auto& n : ck.networks)
    if (n.dim() != target.dim()) throw ConfigError("checkpoint: network dimension differs from the target");
  for (const auto& l : ck.linear_models)
    if (l.dim() != target.dim()) throw ConfigError("checkpoint: model dimension differs from the target");
  if (ck.per_step()) {
    const auto times = score_times(grid);
    if (ck.times.size() != times.size()) throw ConfigError("checkpoint: trained on a different time grid");
    for (std::size_t k = 0; k < times.size(); ++k)
      if (std::abs(ck.times[k] - times[k]) > 1e-12 * std::max(1.0, times[k]))
        throw ConfigError("checkpoint: trained on a different time grid");
  }
}

/// Calls f with the concrete score source a checkpoint describes.
template <class F>
decltype(auto) with_score(const Checkpoint& ck, const GaussianMixture& target, const TimeGrid& grid, F&& f) {
  check_compatible(ck, target, grid);
  if (ck.mode == ScoreMode::oracle) {
    const OracleScore s(target, grid.times());
    return f(s);
  }
  if (ck.mode == ScoreMode::linear) {
    const PerStepScore<LinearScoreModel> s(ck.times, ck.linear_models);
    return f(s);
  }
  if (!ck.per_step()) return f(ck.networks.front());
  const PerStepScore<MlpScoreModel> s(ck.times, ck.networks);
  return f(s);
}

// ---------------------------------------------------------------------------
// Generation

/// TV of a sample against a known law: exact cell masses in 1d, a reference
/// sample of equal size from the law otherwise.
inline TVEstimate tv_against(std::span<const Vec> samples, const GaussianMixture& law, int bins,
                             std::uint64_t seed) {
  if (law.dim() == 1) return tv_histogram(samples, law, bins);
  Rng rng = make_stream(seed, kReferenceStream);
  Points ref(samples.size());
  for (auto& x : ref) x = law.sample(rng);
  return tv_histogram(samples, ref, bins);
}

struct GenerateOutcome {
  GenerateResult result;
  std::optional<TVEstimate> tv;  // against p_{t0}; needs >= 1e3 samples
};

inline ReverseRunSpec reverse_spec(const Config& c, const TimeGrid& grid, std::uint64_t seed) {
  ReverseRunSpec rs;
  rs.grid = grid;
  rs.n_samples = c.sampler.n_samples;
  rs.init = c.sampler.init;
  rs.variant = c.sampler.variant;
  rs.zero_final_noise = c.sampler.zero_final_noise;
  rs.seed = derive_seed(seed, kGenerateStream);
  rs.workers = c.workers;
  return rs;
}

inline GenerateOutcome generate_samples(const Config& c, const Checkpoint& ck, std::uint64_t seed) {
  const auto target = build_target(c.target);
  const auto grid = build_grid(c.grid);
  GenerateOutcome out;
  out.result = with_score(ck, target, grid,
                          [&](const auto& s) { return generate(reverse_spec(c, grid, seed), s, &target); });
  if (out.result.samples.size() >= 1000)
    out.tv = tv_against(out.result.samples, target.marginal_at(grid.t0()), c.metrics.bins, seed);
  return out;
}

inline Table samples_table(const Points& pts) {
  Table t;
  const int d = pts.empty() ? 1 : static_cast<int>(pts.front().size());
  for (int j = 0; j < d; ++j) t.columns.push_back("x" + std::to_string(j));
  for (const auto& p : pts) {
    std::vector<Table::Cell> row;
    for (int j = 0; j < d; ++j) row.emplace_back(p[j]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

inline Json tv_json(const TVEstimate& e) {
  return {{"value", json_number(e.value)},
          {"method", to_string(e.method)},
          {"bins", e.bins},
          {"n_a", e.n_a},
          {"n_b", e.n_b},
          {"value_half_bins", json_number(e.value_half.value_or(std::numeric_limits<double>::quiet_NaN()))},
          {"value_double_bins", json_number(e.value_double.value_or(std::numeric_limits<double>::quiet_NaN()))},
          {"bias_bound", json_number(e.bias_bound)}};
}

// ---------------------------------------------------------------------------
// Decomposition

struct DecomposeOutcome {
  Table rows;             // selected steps with all components
  Table all_steps;        // A_k at every step
  WeightedSum weighted;
  std::size_t violations = 0;
  DecompositionMode mode = DecompositionMode::oracle;
};

/// `rows` indices evenly spaced over 0..K-1, always including both ends.
inline std::vector<std::size_t> selected_steps(int K, int rows) {
  std::vector<std::size_t> out;
  if (rows >= K) {
    for (int k = 0; k < K; ++k) out.push_back(static_cast<std::size_t>(k));
    return out;
  }
  for (int i = 0; i < rows; ++i) {
    const auto k = static_cast<std::size_t>(std::llround(rows == 1 ? 0.0 : double(i) * (K - 1) / (rows - 1)));
    if (out.empty() || out.back() != k) out.push_back(k);
  }
  return out;
}

/// Error decomposition of a trained score at selected grid steps. Linear
/// mode retrains each selected step with the training seed so the closed-form
/// minimizers see the exact SGD sample. Network mode fits the two proxies
/// by full-batch descent from the trained weights, or with `proxies` off
/// reports A alone. Oracle mode is all zero.
inline DecomposeOutcome decompose_run(const Config& c, const Checkpoint& ck, std::uint64_t seed,
                                      bool proxies = true) {
  const std::uint64_t train_seed = ck.seed;
  const auto target = build_target(c.target);
  const auto grid = build_grid(c.grid);
  const auto times = score_times(grid);
  const auto budgets = step_budgets(c.training, grid);
  check_compatible(ck, target, grid);
  DecomposeOutcome out;
  out.mode = ck.mode == ScoreMode::mlp ? DecompositionMode::mlp : DecompositionMode::oracle;
  out.rows.columns = {"k", "t", "A", "A_se", "e_approx", "e_approx_se", "e_stat", "e_stat_se",
                      "e_opt", "e_opt_se", "inequality_holds", "trusted", "flags"};
  out.all_steps.columns = {"k", "t", "A", "A_se"};

  std::vector<double> A(times.size());
  with_score(ck, target, grid, [&](const auto& s) {
    for (std::size_t k = 0; k < times.size(); ++k) {
      Rng rng = make_stream(derive_seed(seed, kDecomposeStream), k);
      const auto a = estimate_A(s, target, times[k], 1000, rng);
      A[k] = a.value;
      out.all_steps.add({static_cast<double>(k), times[k], a.value, a.se});
    }
    return 0;
  });
  out.weighted = weighted_error_sum(A, grid);

  for (std::size_t k : selected_steps(grid.steps(), c.decompose.rows)) {
    const double t = times[k];
    Rng rng = make_stream(derive_seed(seed, kDecomposeStream, 1), k);
    Decomposition d;
    if (ck.mode == ScoreMode::linear) {
      const auto step = detail::train_linear_step(c, target, t, budgets[k], derive_seed(train_seed, k));
      d = decompose(ck.linear_models[k], target, t, step.draws, c.decompose.mc_n, rng);
    } else if (ck.mode == ScoreMode::oracle) {
      const OracleScore o(target, {t});
      d = scorelab::detail::decompose_common(o, o, o, target, t, c.decompose.mc_n, rng);
      d.mode = DecompositionMode::oracle;
    } else if (!proxies) {
      const MlpScoreModel& hat = ck.per_step() ? ck.networks[k] : ck.networks.front();
      const double nan = std::numeric_limits<double>::quiet_NaN();
      d.t = t;
      d.A = estimate_A(hat, target, t, c.decompose.mc_n, rng);
      d.e_approx = d.e_stat = d.e_opt = {nan, nan};
      d.mode = DecompositionMode::mlp;
      d.trusted = false;
      d.flags.push_back("components not estimated");
    } else {
      const MlpScoreModel& hat = ck.per_step() ? ck.networks[k] : ck.networks.front();
      Rng dr = make_stream(derive_seed(seed, kDecomposeStream, 2), k);
      std::vector<ForwardDraw> small(budgets[k]), large(budgets[k] * c.decompose.proxy_factor);
      for (auto& x : small) x = draw_forward(target, t, dr);
      for (auto& x : large) x = draw_forward(target, t, dr);
      const auto pb = fit_full_batch(hat, small, c.decompose.proxy_eta, c.decompose.proxy_iters, 1e-6, c.workers);
      const auto pa = fit_full_batch(hat, large, c.decompose.proxy_eta, c.decompose.proxy_iters, 1e-6, c.workers);
      d = decompose(hat, pa, pb, target, t, c.decompose.mc_n, rng);
    }
    std::string flags;
    for (const auto& f : d.flags) flags += (flags.empty() ? "" : "; ") + f;
    const bool has_parts = std::isfinite(d.e_approx.value);
    out.violations += has_parts && !d.inequality_holds();
    out.rows.add({static_cast<double>(k), t, d.A.value, d.A.se, d.e_approx.value, d.e_approx.se, d.e_stat.value,
                  d.e_stat.se, d.e_opt.value, d.e_opt.se, has_parts ? (d.inequality_holds() ? "true" : "false") : "-",
                  d.trusted ? "true" : "false", flags.empty() ? "-" : flags});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scaling sweeps

struct SweepPlan {
  double eps = 0.0;
  int replicate = 0;
  double T = 0.0;
  int K = 0;
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  double t0 = 0.0;
};

/// T = c_T log(1/eps), K = ceil(c_K / eps^2), n = ceil(c_n / eps^4). The
/// seed depends on the value of eps and the replicate only, so points do not
/// move when the grid changes.
inline SweepPlan plan_point(const Config& c, double eps, int replicate, double t0) {
  SweepPlan p;
  p.eps = eps;
  p.replicate = replicate;
  p.T = c.sweep.c_T * std::log(1.0 / eps);
  p.K = static_cast<int>(std::ceil(c.sweep.c_K / (eps * eps)));
  p.n = static_cast<std::uint64_t>(std::ceil(c.sweep.c_n / std::pow(eps, 4)));
  p.t0 = t0;
  p.seed = derive_seed(c.seed, std::bit_cast<std::uint64_t>(eps), static_cast<std::uint64_t>(replicate));
  return p;
}

/// The config a sweep point runs with.
inline Config point_config(const Config& c, const SweepPlan& p) {
  Config pc = c;
  pc.grid.horizon = p.T;
  pc.grid.steps = p.K;
  pc.grid.t0 = p.t0;
  pc.model.mode = c.sweep.score;
  if (pc.model.mode == ScoreMode::linear) pc.model.per_timestep = true;
  pc.training.budget = p.n;
  pc.seed = p.seed;
  pc.workers = 1;
  return pc;
}

struct PointResult {
  SweepPlan plan;
  TVEstimate tv;                      // TV(p_t0, p_hat_t0)
  std::optional<TVEstimate> tv_total;  // TV(p_0, p_hat_t0), t0 sweep only
  double leg_early = 0.0;             // TV(p_0, p_t0), t0 sweep only
  double final_delta = std::numeric_limits<double>::quiet_NaN();
  TrainOutcome training;
  std::string error;
  bool divergence = false;
};

inline PointResult run_point(const Config& c, const SweepPlan& plan, bool with_total_leg) {
  PointResult r;
  r.plan = plan;
  const Config pc = point_config(c, plan);
  try {
    r.training = train(pc, plan.seed);
    for (const auto& s : r.training.stages)
      if (!s.trace.records.empty()) r.final_delta = s.trace.records.back().delta;
    const auto gen = generate_samples(pc, r.training.checkpoint, plan.seed);
    if (!gen.tv) throw ConfigError("sweep: sampler.n_samples must be >= 1000 for TV");
    r.tv = *gen.tv;
    if (with_total_leg) {
      const auto target = build_target(pc.target);
      r.tv_total = tv_against(gen.result.samples, target, pc.metrics.bins, plan.seed);
      r.leg_early = tv_quadrature(target, target.marginal_at(plan.t0)).value;
    }
  } catch (const DivergenceError& e) {
    r.error = e.what();
    r.divergence = true;
  } catch (const Error& e) {
    r.error = e.what();
  }
  return r;
}

/// Runs the points on the worker pool. After the first failure no new point
/// starts; those left out carry a "skipped" error.
inline void run_points(const Config& c, const std::vector<SweepPlan>& plans, bool with_total_leg,
                       std::vector<PointResult>& out) {
  out.assign(plans.size(), {});
  std::atomic<bool> stop{false};
  parallel_for(plans.size(), c.workers, [&](std::size_t i) {
    if (stop.load()) {
      out[i].plan = plans[i];
      out[i].error = "skipped after an earlier failure";
      return;
    }
    out[i] = run_point(c, plans[i], with_total_leg);
    if (!out[i].error.empty()) stop.store(true);
  });
}

struct EpsSummary {
  double eps = 0.0;
  double median = 0.0;
  double se = 0.0;  // replicate standard error of the mean; 0 with one replicate
  int replicates = 0;
  double bound = 0.0;  // C * eps + floor
  bool ok = true;
};

struct SweepOutcome {
  std::vector<PointResult> points;  // grid order, replicate-major within eps
  std::vector<EpsSummary> summary;
  double C = std::numeric_limits<double>::quiet_NaN();
  double floor = 0.0;
  std::optional<LineFit> fit;  // log median TV against log eps
  std::size_t violations = 0;
  std::vector<std::string> errors;
  bool divergence = false;
};

/// Bound-direction check TV <= C eps + floor + 3 se with C fitted at the
/// largest eps of the grid: C = (median TV - floor) / eps.
inline void summarize_sweep(SweepOutcome& s, double floor = 0.0) {
  std::map<double, std::vector<double>> by_eps;
  for (const auto& p : s.points)
    if (p.error.empty()) by_eps[p.plan.eps].push_back(p.tv.value);
  s.summary.clear();
  for (const auto& [eps, v] : by_eps) {
    EpsSummary e;
    e.eps = eps;
    e.median = median(v);
    e.se = v.size() > 1 ? std::sqrt(sample_variance(v) / static_cast<double>(v.size())) : 0.0;
    e.replicates = static_cast<int>(v.size());
    s.summary.push_back(e);
  }
  std::sort(s.summary.begin(), s.summary.end(), [](auto& a, auto& b) { return a.eps > b.eps; });
  s.violations = 0;
  if (s.summary.empty()) return;
  s.floor = floor;
  s.C = std::max(0.0, s.summary.front().median - floor) / s.summary.front().eps;
  for (auto& e : s.summary) {
    e.bound = s.C * e.eps + floor;
    e.ok = e.median <= e.bound + 3.0 * e.se;
    s.violations += !e.ok;
  }
  if (s.summary.size() >= 2) {
    std::vector<double> x, y;
    for (const auto& e : s.summary) {
      x.push_back(e.eps);
      y.push_back(std::max(e.median, 1e-300));
    }
    s.fit = fit_loglog(x, y);
  } else {
    s.fit.reset();
  }
}

inline SweepOutcome sweep_theorem1(const Config& c) {
  std::vector<SweepPlan> plans;
  for (double eps : c.sweep.epsilons)
    for (int r = 0; r < c.sweep.replicates; ++r) plans.push_back(plan_point(c, eps, r, c.grid.t0));
  SweepOutcome out;
  out.points.resize(plans.size());
  run_points(c, plans, false, out.points);
  for (const auto& p : out.points)
    if (!p.error.empty()) {
      out.errors.push_back("eps=" + format_double(p.plan.eps) + " replicate " + std::to_string(p.plan.replicate) +
                           ": " + p.error);
      out.divergence = out.divergence || p.divergence;
    }
  summarize_sweep(out, c.sweep.approx_floor);
  return out;
}

inline Table sweep_table(const SweepOutcome& s) {
  Table t;
  t.columns = {"eps", "replicate", "T", "K", "n", "tv", "tv_half_bins", "tv_double_bins", "tv_bias_bound",
               "bins", "final_delta", "status"};
  for (const auto& p : s.points) {
    const bool ok = p.error.empty();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    t.add({p.plan.eps, static_cast<double>(p.plan.replicate), p.plan.T, static_cast<double>(p.plan.K),
           static_cast<double>(p.plan.n), ok ? p.tv.value : nan, ok ? p.tv.value_half.value_or(nan) : nan,
           ok ? p.tv.value_double.value_or(nan) : nan, ok ? p.tv.bias_bound : nan,
           ok ? static_cast<double>(p.tv.bins) : nan, p.final_delta, ok ? "ok" : "failed"});
  }
  return t;
}

inline Json sweep_summary_json(const SweepOutcome& s) {
  Json rows = Json::array();
  for (const auto& e : s.summary)
    rows.push_back({{"eps", e.eps}, {"median_tv", e.median}, {"se", e.se}, {"replicates", e.replicates},
                    {"bound", json_number(e.bound)}, {"within_bound", e.ok}});
  Json j{{"C", json_number(s.C)}, {"approx_floor", s.floor}, {"violations", s.violations}, {"rows", rows}, {"errors", s.errors}};
  if (s.fit)
    j["fit"] = {{"slope", s.fit->slope}, {"intercept", s.fit->intercept}};
  else
    j["fit"] = nullptr;
  return j;
}

/// Fixed-epsilon sweep over t0 with the p_0 -> p_t0 leg added. The triangle
/// check compares TV(p_0, p_hat) against the two legs on the same cells.
struct Sweep2Outcome {
  std::vector<PointResult> points;
  std::size_t triangle_failures = 0;
  bool early_leg_monotone = true;
  std::vector<std::string> errors;
  bool divergence = false;
};

inline Sweep2Outcome sweep_theorem2(const Config& c) {
  const auto target = build_target(c.target);
  if (target.dim() > 2) throw ConfigError("sweep-theorem2: quadrature legs need d <= 2");
  std::vector<SweepPlan> plans;
  for (double t0 : c.sweep.t0_grid)
    for (int r = 0; r < c.sweep.replicates; ++r) {
      auto p = plan_point(c, c.sweep.epsilon, r, t0);
      p.seed = derive_seed(p.seed, std::bit_cast<std::uint64_t>(t0));
      plans.push_back(p);
    }
  Sweep2Outcome out;
  out.points.resize(plans.size());
  run_points(c, plans, true, out.points);
  std::map<double, double> early;
  for (const auto& p : out.points) {
    if (!p.error.empty()) {
      out.errors.push_back("t0=" + format_double(p.plan.t0) + " replicate " + std::to_string(p.plan.replicate) +
                           ": " + p.error);
      out.divergence = out.divergence || p.divergence;
      continue;
    }
    early[p.plan.t0] = p.leg_early;
    const double slack = 3.0 * (p.tv.se + p.tv_total->se) + 1e-12;
    if (p.tv_total->value > p.leg_early + p.tv.value + slack) ++out.triangle_failures;
  }
  double prev = -1.0;
  for (const auto& [t0, leg] : early) {
    if (leg < prev - 1e-9) out.early_leg_monotone = false;
    prev = leg;
  }
  return out;
}

inline Table sweep2_table(const Sweep2Outcome& s) {
  Table t;
  t.columns = {"t0", "replicate", "eps", "T", "K", "n", "leg_early", "tv_generated", "tv_total",
               "legs_sum", "triangle_ok", "sqrt_t0_log", "status"};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& p : s.points) {
    const bool ok = p.error.empty();
    const double sum = ok ? p.leg_early + p.tv.value : nan;
    const bool tri = ok && p.tv_total->value <= sum + 3.0 * (p.tv.se + p.tv_total->se) + 1e-12;
    t.add({p.plan.t0, static_cast<double>(p.plan.replicate), p.plan.eps, p.plan.T, static_cast<double>(p.plan.K),
           static_cast<double>(p.plan.n), ok ? p.leg_early : nan, ok ? p.tv.value : nan,
           ok ? p.tv_total->value : nan, sum, tri ? "true" : "false",
           std::sqrt(p.plan.t0) * std::log(1.0 / p.plan.t0), ok ? "ok" : "failed"});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Lemma suite

struct VerifyOutcome {
  std::vector<LemmaCheckResult> checks;
  bool all_pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& r) { return r.pass; });
  }
};

inline VerifyOutcome verify_lemmas(const Config& c) {
  VerifyOutcome out;
  for (auto& r : truncated_moment_check(c.verify.moment_tolerance)) out.checks.push_back(std::move(r));
  const auto kappas = kappa_grid(c.verify);
  for (auto& r : mills_ratio_bound_check(kappas)) out.checks.push_back(std::move(r));

  const auto target = build_target(c.target);
  const int d = target.dim();
  Rng rng = make_stream(c.seed, kVerifyStream);
  const auto arch = build_architecture(c.model, d);
  const auto net_a = MlpScoreModel::init(arch, rng), net_b = MlpScoreModel::init(arch, rng);
  Points xs(1000);
  for (auto& x : xs) x = target.sample(rng);
  out.checks.push_back(massart_rademacher_check(net_a, net_b, xs, 0.5, c.verify.massart_replicates, rng).result);

  // linear growth of a random network: sup |f| / (1 + |x|) against C_theta
  const auto cert = linear_growth_certificate(net_a);
  double worst = 0.0;
  std::normal_distribution<double> wide(0.0, 10.0);
  for (int i = 0; i < 20'000; ++i) {
    Vec x(d);
    for (auto& v : x) v = wide(rng);
    const double t = std::uniform_real_distribution<double>(0.0, 10.0)(rng);
    worst = std::max(worst, net_a.predict_noise(x, t).cwiseAbs().maxCoeff() / (1.0 + x.norm()));
  }
  LemmaCheckResult lg{"linear-growth", "20000 probes", cert.C_theta, worst};
  lg.abs_err = cert.C_theta - worst;
  lg.rel_err = lg.abs_err / std::max(cert.C_theta, 1e-300);
  lg.pass = worst <= cert.C_theta;
  out.checks.push_back(lg);

  for (double t : {0.1, 1.0}) {
    const LinearScoreProblem prob(target, t);
    auto r = quadratic_growth_check(prob, c.verify.growth_probes, 2.0, rng);
    r.point = "t=" + format_double(t) + " " + r.point;
    out.checks.push_back(std::move(r));
  }
  return out;
}

inline Table verify_table(const VerifyOutcome& v) {
  Table t;
  t.columns = {"lemma", "point", "analytic", "oracle", "abs_err", "rel_err", "tolerance", "pass"};
  for (const auto& r : v.checks)
    t.add({r.lemma, r.point, r.analytic, r.oracle, r.abs_err, r.rel_err, r.tolerance, r.pass ? "true" : "false"});
  return t;
}

}  // namespace scorelab::experiment
