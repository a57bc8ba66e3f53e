#pragma once

// Score error A(k) and its approximation / statistical / optimization
// components, truncated scores, and the time-weighted error sum.

#include "scorelab/core.hpp"
#include "scorelab/ou_process.hpp"
#include "scorelab/score_net.hpp"
#include "scorelab/targets.hpp"
#include "scorelab/training.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scorelab {

/// E_{x ~ p_t} ||s(x, t) - grad log p_t(x)||^2 with x drawn through the forward map.
template <ScoreSource S>
Estimate estimate_A(const S& model, const GaussianMixture& target, double t, std::size_t mc_n, Rng& rng) {
  if (mc_n < 1000) throw ConfigError("estimate_A: mc_n must be >= 1000");
  return population_score_loss(model, target, t, mc_n, rng);
}

enum class DecompositionMode { oracle, mlp };

inline std::string_view to_string(DecompositionMode m) { return m == DecompositionMode::oracle ? "oracle" : "mlp"; }

struct Decomposition {
  double t = 0.0;
  Estimate A;
  Estimate e_approx;
  Estimate e_stat;
  Estimate e_opt;
  DecompositionMode mode = DecompositionMode::oracle;
  bool trusted = true;  // false when a proxy minimizer did not converge
  std::vector<std::string> flags;

  double combined_se() const {
    return std::sqrt(A.se * A.se + 16.0 * (e_approx.se * e_approx.se + e_stat.se * e_stat.se + e_opt.se * e_opt.se));
  }
  /// A <= 4 (e_approx + e_stat + e_opt) + 3 combined se.
  bool inequality_holds() const {
    return A.value <= 4.0 * (e_approx.value + e_stat.value + e_opt.value) + 3.0 * combined_se();
  }
};

namespace detail {

template <ScoreSource Hat, ScoreSource Sa, ScoreSource Sb>
Decomposition decompose_common(const Hat& hat, const Sa& sa, const Sb& sb, const GaussianMixture& target, double t,
                               std::size_t mc_n, Rng& rng) {
  if (mc_n < 1000) throw ConfigError("decompose: mc_n must be >= 1000");
  const auto pt = target.marginal_at(t);
  std::vector<double> a(mc_n), ap(mc_n), st(mc_n), op(mc_n);
  for (std::size_t i = 0; i < mc_n; ++i) {
    const Vec x = draw_forward(target, t, rng).x;
    const Vec s = pt.score(x);
    const Vec h = hat.score(x, t), va = sa.score(x, t), vb = sb.score(x, t);
    a[i] = (h - s).squaredNorm();
    ap[i] = (va - s).squaredNorm();
    st[i] = (va - vb).squaredNorm();
    op[i] = (h - vb).squaredNorm();
  }
  Decomposition d;
  d.t = t;
  d.A = mean_se(a);
  d.e_approx = mean_se(ap);
  d.e_stat = mean_se(st);
  d.e_opt = mean_se(op);
  for (const auto* e : {&d.A, &d.e_approx, &d.e_stat, &d.e_opt})
    if (e->value < -3.0 * e->se) d.flags.push_back("negative estimate beyond 3 se");
  return d;
}

}  // namespace detail

/// Oracle mode: theta_a and theta_b are the closed-form minimizers of the
/// linear family; `sample` is the training sample behind theta_b. All four
/// quantities share the same Monte-Carlo points.
inline Decomposition decompose(const LinearScoreModel& model_hat, const GaussianMixture& target, double t,
                               std::span<const ForwardDraw> sample, std::size_t mc_n, Rng& rng,
                               RegressionTarget response = RegressionTarget::conditional_score) {
  const auto mins = closed_form_minimizers(target, t, sample, response);
  auto d = detail::decompose_common(model_hat, mins.theta_a, mins.theta_b, target, t, mc_n, rng);
  d.mode = DecompositionMode::oracle;
  return d;
}

/// Closed-form E||s_{theta_a} - s_{theta_b}||^2 under p_t.
inline double e_stat_closed_form(const LinearMinimizers& mins, const GaussianMixture& target, double t) {
  const auto [m, c] = marginal_moments(target, t);
  return linear_gap_second_moment(mins.theta_a, mins.theta_b, m, c);
}

/// Result of driving the full-batch denoising loss toward a stationary point.
struct ProxyFit {
  MlpScoreModel model;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged() const { return grad_norm <= 1e-6; }
};

/// Full-batch gradient descent on the denoising loss over `data`.
inline ProxyFit fit_full_batch(MlpScoreModel init, std::span<const ForwardDraw> data, double eta,
                               std::size_t max_iters, double tol = 1e-6, int workers = 1) {
  Eigen::VectorXd theta = init.params();
  double gn = std::numeric_limits<double>::infinity();
  std::size_t it = 0;
  for (; it < max_iters; ++it) {
    const auto lg = denoising_loss(init.with_params(theta), data, nullptr, workers);
    if (!std::isfinite(lg.loss)) throw DivergenceError("fit_full_batch: non-finite loss", it);
    gn = lg.grad.norm();
    if (gn <= tol) break;
    theta -= eta * lg.grad;
  }
  return {init.with_params(std::move(theta)), gn, it};
}

/// Network mode: theta_a and theta_b are converged proxies supplied by the
/// caller (a long fit on a much larger sample, and a fit on the training
/// sample). Non-converged proxies mark the result untrusted.
inline Decomposition decompose(const MlpScoreModel& model_hat, const ProxyFit& theta_a, const ProxyFit& theta_b,
                               const GaussianMixture& target, double t, std::size_t mc_n, Rng& rng) {
  auto d = detail::decompose_common(model_hat, theta_a.model, theta_b.model, target, t, mc_n, rng);
  d.mode = DecompositionMode::mlp;
  if (!theta_a.converged()) d.flags.push_back("theta_a proxy not converged");
  if (!theta_b.converged()) d.flags.push_back("theta_b proxy not converged");
  d.trusted = theta_a.converged() && theta_b.converged();
  return d;
}

// ---------------------------------------------------------------------------
// Reports

struct ErrorReport {
  std::vector<Decomposition> rows;  // one per grid step k
  double weighted_sum = 0.0;
  std::optional<double> integral_bound;
  DecompositionMode mode = DecompositionMode::oracle;

  std::size_t inequality_violations() const {
    std::size_t v = 0;
    for (const auto& r : rows) v += !r.inequality_holds();
    return v;
  }
};

struct WeightedSum {
  double sum = 0.0;
  std::optional<double> bound;           // eps^2 (T + log(1/kappa_stop))
  std::optional<double> exact_integral;  // eps^2 * integral of 1/(1 - e^{-2(T-t)}) over [t0, T - kappa_stop]
  bool within_bound = true;
};

/// sum_k A_k (t_{k+1} - t_k); with eps configured, also the envelope
/// eps^2 / (1 - e^{-2(T - t)}) integrated over the grid span. With
/// kappa_stop = 0 the integral diverges and the bound is +inf.
inline WeightedSum weighted_error_sum(std::span<const double> A, const TimeGrid& grid,
                                      std::optional<double> eps = std::nullopt) {
  if (A.size() != static_cast<std::size_t>(grid.steps()))
    throw ContractError("weighted_error_sum: report has " + std::to_string(A.size()) + " rows, grid has " +
                        std::to_string(grid.steps()) + " steps");
  std::vector<double> terms(A.size());
  for (std::size_t k = 0; k < A.size(); ++k) terms[k] = A[k] * grid.deltas()[k];
  WeightedSum w;
  w.sum = pairwise_sum(terms);
  if (eps) {
    const double e2 = *eps * *eps;
    const double T = grid.horizon(), kap = grid.kappa_stop();
    if (kap == 0.0) {
      w.bound = w.exact_integral = std::numeric_limits<double>::infinity();
    } else {
      w.bound = e2 * (T + std::log(1.0 / kap));
      // antiderivative of 1/(1 - e^{-2u}) is u + log(1 - e^{-2u}) / 2
      auto F = [](double u) { return u + 0.5 * std::log(-std::expm1(-2.0 * u)); };
      w.exact_integral = e2 * (F(T - grid.t0()) - F(kap));
    }
    w.within_bound = w.sum <= *w.bound;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Truncation

/// Coordinates whose scaled noise |(x - e^{-t} x0) / sigma_t^2|_j reaches
/// trunc_kappa are zeroed.
struct TruncationSpec {
  double trunc_kappa = 1.0;
};

/// log(d n / delta).
inline double default_trunc_kappa(int d, std::size_t n, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("default_trunc_kappa: delta must lie in (0, 1)");
  return std::log(static_cast<double>(d) * static_cast<double>(n) / delta);
}

inline void validate(const TruncationSpec& s) {
  if (!(s.trunc_kappa >= 0.0)) throw DomainError("TruncationSpec: trunc_kappa must be >= 0");
}

/// Scaled variable (x - e^{-t} x0) / sigma_t^2 of a forward draw.
inline Vec scaled_noise(const ForwardDraw& d) {
  if (d.x0.size() == 0 || d.x0.size() != d.x.size()) throw ContractError("truncation: draw lacks x0 provenance");
  const auto p = ou_marginal_params(d.t);
  if (p.sigma_sq == 0.0) throw DivisionGuardError("truncation: sigma_t = 0");
  return (d.x - p.shrink * d.x0) / p.sigma_sq;
}

inline Vec truncate(const Vec& value, const ForwardDraw& d, const TruncationSpec& spec) {
  const Vec u = scaled_noise(d);
  if (u.size() != value.size()) throw ContractError("truncate_score: value and draw differ in dimension");
  Vec out = value;
  for (Eigen::Index j = 0; j < u.size(); ++j)
    if (std::abs(u[j]) >= spec.trunc_kappa) out[j] = 0.0;
  return out;
}

inline std::vector<Vec> truncate_score(std::span<const Vec> values, std::span<const ForwardDraw> provenance,
                                       const TruncationSpec& spec) {
  validate(spec);
  if (values.size() != provenance.size()) throw ContractError("truncate_score: values and provenance misaligned");
  std::vector<Vec> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = truncate(values[i], provenance[i], spec);
  return out;
}

struct TruncationRate {
  Estimate frequency;        // per-coordinate event frequency
  double gaussian_tail = 0;  // P(|N(0,1)| >= kappa sigma_t)
  double envelope = 0;       // exp(-kappa^2 (1 - e^{-t}))
};

/// Per-coordinate truncation frequency over forward draws.
inline TruncationRate truncation_rate(const GaussianMixture& target, double t, double kappa, std::size_t mc_n,
                                      Rng& rng) {
  const TruncationSpec spec{kappa};
  validate(spec);
  const int d = target.dim();
  std::vector<double> hits(mc_n * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < mc_n; ++i) {
    const Vec u = scaled_noise(draw_forward(target, t, rng));
    for (int j = 0; j < d; ++j) hits[i * d + j] = std::abs(u[j]) >= kappa ? 1.0 : 0.0;
  }
  const double sigma = std::sqrt(ou_marginal_params(t).sigma_sq);
  return {mean_se(hits), 2.0 * normal::upper_tail(kappa * sigma), std::exp(-kappa * kappa * -std::expm1(-t))};
}

/// |L(theta) - L'(theta)| where L' compares truncated model and true scores.
/// Both are truncated on the same event, so the pointwise difference is the
/// squared error restricted to the truncated coordinates. All kappas share
/// the same draws, which makes the curve monotone in kappa.
template <ScoreSource S>
std::vector<Estimate> truncation_gap_curve(const S& model, const GaussianMixture& target, double t,
                                           std::span<const double> kappas, std::size_t mc_n, Rng& rng) {
  if (mc_n < 10000) throw ConfigError("truncation_gap: mc_n must be >= 1e4");
  for (double k : kappas) validate(TruncationSpec{k});
  const auto pt = target.marginal_at(t);
  std::vector<std::vector<double>> gaps(kappas.size(), std::vector<double>(mc_n));
  for (std::size_t i = 0; i < mc_n; ++i) {
    const auto dr = draw_forward(target, t, rng);
    const Vec u = scaled_noise(dr);
    const Vec err = Vec(model.score(dr.x, t)) - pt.score(dr.x);
    for (std::size_t k = 0; k < kappas.size(); ++k) {
      double g = 0.0;
      for (Eigen::Index j = 0; j < u.size(); ++j)
        if (std::abs(u[j]) >= kappas[k]) g += err[j] * err[j];
      gaps[k][i] = g;
    }
  }
  std::vector<Estimate> out;
  for (const auto& g : gaps) out.push_back(mean_se(g));
  return out;
}

template <ScoreSource S>
Estimate truncation_gap(const S& model, const GaussianMixture& target, double t, const TruncationSpec& spec,
                        std::size_t mc_n, Rng& rng) {
  const double k = spec.trunc_kappa;
  return truncation_gap_curve(model, target, t, std::span<const double>(&k, 1), mc_n, rng).front();
}

}  // namespace scorelab
