#pragma once

// Numeric checks of the supporting lemmas: truncated normal second moment,
// the Mills ratio bound, the two-function Massart bound, the empirical
// generalization gap and quadratic growth of the linear-family loss.

#include "scorelab/core.hpp"
#include "scorelab/normal.hpp"
#include "scorelab/score_net.hpp"
#include "scorelab/targets.hpp"
#include "scorelab/training.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace scorelab {

struct LemmaCheckResult {
  std::string lemma;
  std::string point;  // human-readable location of the check
  double analytic = 0.0;
  double oracle = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Relative-error comparison; pass iff rel_err <= tol.
inline LemmaCheckResult compare(std::string lemma, std::string point, double analytic, double oracle, double tol) {
  LemmaCheckResult r{std::move(lemma), std::move(point), analytic, oracle};
  r.abs_err = std::abs(analytic - oracle);
  r.rel_err = r.abs_err / std::max(std::abs(oracle), std::numeric_limits<double>::min());
  r.tolerance = tol;
  r.pass = r.rel_err <= tol;
  return r;
}

// ---------------------------------------------------------------------------
// Truncated normal

/// E[X^2 | |X - mu| > a] for X ~ N(mu, sigma^2):
/// mu^2 + sigma^2 + sigma a h(a / sigma), with h the normal hazard. h switches
/// to a continued fraction past a / sigma = 8 where 1 - Phi underflows.
inline double truncated_second_moment(double mu, double sigma, double a) {
  if (!(sigma > 0.0)) throw DomainError("truncated_second_moment: sigma must be > 0");
  if (!(a >= 0.0)) throw DomainError("truncated_second_moment: a must be >= 0");
  if (a == 0.0) return mu * mu + sigma * sigma;
  return mu * mu + sigma * sigma + sigma * a * normal::hazard(a / sigma);
}

/// Same quantity by adaptive quadrature of the two tails, in standardized
/// units: E[(mu + sigma Z)^2 1{|Z| > alpha}] / P(|Z| > alpha).
inline double truncated_second_moment_quadrature(double mu, double sigma, double a) {
  if (!(sigma > 0.0) || !(a >= 0.0)) throw DomainError("truncated_second_moment_quadrature: bad arguments");
  const double alpha = a / sigma;
  // substitute z = alpha + u and pull out phi(alpha) so that the integrand
  // stays O(1) for large alpha
  boost::math::quadrature::exp_sinh<double> es;
  auto tail = [&](double sign) {
    auto f = [&](double u) {
      const double z = alpha + u;
      const double x = mu + sign * sigma * z;
      return x * x * std::exp(-u * (alpha + 0.5 * u));
    };
    return es.integrate(f, 1e-14);
  };
  auto mass = [&](double u) { return std::exp(-u * (alpha + 0.5 * u)); };
  const double num = tail(1.0) + tail(-1.0);
  const double den = 2.0 * es.integrate(mass, 1e-14);
  return num / den;
}

/// The 45-point grid mu in {-3, 0, 3}, sigma in {0.5, 1, 2}, a in {0, 0.5, 1, 2, 5}.
inline std::vector<LemmaCheckResult> truncated_moment_check(double tol = 1e-6) {
  std::vector<LemmaCheckResult> out;
  for (double mu : {-3.0, 0.0, 3.0})
    for (double s : {0.5, 1.0, 2.0})
      for (double a : {0.0, 0.5, 1.0, 2.0, 5.0})
        out.push_back(compare("truncated-second-moment",
                              "mu=" + std::to_string(mu) + " sigma=" + std::to_string(s) + " a=" + std::to_string(a),
                              truncated_second_moment(mu, s, a), truncated_second_moment_quadrature(mu, s, a), tol));
  return out;
}

// ---------------------------------------------------------------------------
// Mills ratio

/// phi(k) / (1 - Phi(k)) <= k + 1/k at every grid point. analytic holds the
/// bound, oracle the hazard, abs_err the slack.
inline std::vector<LemmaCheckResult> mills_ratio_bound_check(std::span<const double> kappas) {
  if (kappas.empty()) throw ConfigError("mills_ratio_bound_check: empty kappa grid");
  std::vector<LemmaCheckResult> out;
  for (double k : kappas) {
    if (!(k > 0.0)) throw ConfigError("mills_ratio_bound_check: kappa must be > 0");
    LemmaCheckResult r{"mills-ratio", "kappa=" + std::to_string(k), k + 1.0 / k, normal::hazard(k)};
    r.abs_err = r.analytic - r.oracle;
    r.rel_err = r.abs_err / r.analytic;
    r.pass = r.oracle <= r.analytic;
    out.push_back(std::move(r));
  }
  return out;
}

/// Log-spaced grid of `count` points on [lo, hi].
inline std::vector<double> log_grid(double lo, double hi, int count) {
  if (!(lo > 0.0 && hi > lo) || count < 2) throw ConfigError("log_grid: need 0 < lo < hi and count >= 2");
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = lo * std::pow(hi / lo, double(i) / (count - 1));
  return g;
}

// ---------------------------------------------------------------------------
// Massart

struct MassartReport {
  Estimate rademacher;       // E_sigma max_theta sum_i f_i(theta) sigma_i
  double l2 = 0.0;           // max_theta ||f(theta)||_2
  double sup_abs = 0.0;      // max |f_i(theta)|
  double certificate = 0.0;  // (B W)^L (d + L / W)
  bool pass = false;
  LemmaCheckResult result;
};

/// Two-function class {f_a, f_b} given by their values on a sample.
inline MassartReport massart_rademacher_check(std::span<const double> fa, std::span<const double> fb,
                                              double certificate, int replicates, Rng& rng) {
  if (fa.size() != fb.size()) throw ContractError("massart_rademacher_check: value vectors differ in length");
  if (fa.size() < 100) throw ConfigError("massart_rademacher_check: need n >= 100");
  if (replicates < 2) throw ConfigError("massart_rademacher_check: need >= 2 replicates");
  std::bernoulli_distribution coin(0.5);
  std::vector<double> m(static_cast<std::size_t>(replicates));
  for (auto& v : m) {
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < fa.size(); ++i) {
      const double s = coin(rng) ? 1.0 : -1.0;
      sa += s * fa[i];
      sb += s * fb[i];
    }
    v = std::max(sa, sb);
  }
  MassartReport r;
  r.rademacher = mean_se(m);
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < fa.size(); ++i) {
    na += fa[i] * fa[i];
    nb += fb[i] * fb[i];
    r.sup_abs = std::max({r.sup_abs, std::abs(fa[i]), std::abs(fb[i])});
  }
  r.l2 = std::sqrt(std::max(na, nb));
  r.certificate = certificate;
  const bool first = r.rademacher.value <= r.l2 + 3.0 * r.rademacher.se;
  const bool second = r.l2 <= certificate;
  r.pass = first && second;
  r.result = {"massart", "n=" + std::to_string(fa.size()), r.l2, r.rademacher.value, r.l2 - r.rademacher.value,
              (r.l2 - r.rademacher.value) / std::max(r.l2, 1e-300), 3.0 * r.rademacher.se, r.pass};
  return r;
}

/// Network-output form: f(theta) stacks the noise predictions of each model at
/// (x_i, t); the certificate uses the larger parameter bound of the pair.
inline MassartReport massart_rademacher_check(const MlpScoreModel& a, const MlpScoreModel& b,
                                              std::span<const Vec> xs, double t, int replicates, Rng& rng) {
  if (!(a.architecture() == b.architecture())) throw ContractError("massart_rademacher_check: architectures differ");
  std::vector<double> fa, fb;
  for (const auto& x : xs) {
    const Vec pa = a.predict_noise(x, t), pb = b.predict_noise(x, t);
    for (Eigen::Index j = 0; j < pa.size(); ++j) {
      fa.push_back(pa[j]);
      fb.push_back(pb[j]);
    }
  }
  const auto& arch = a.architecture();
  const double B = std::max(a.max_abs_param(), b.max_abs_param());
  return massart_rademacher_check(fa, fb, massart_bound(B, arch.width, arch.depth, arch.dim), replicates, rng);
}

// ---------------------------------------------------------------------------
// Generalization gap

struct GapRow {
  std::size_t n = 0;
  double mean_gap = 0.0;
  double median_gap = 0.0;
  double quantile_gap = 0.0;  // 1 - delta quantile over replicates
  double var_empirical = 0.0;  // variance of the empirical loss over replicates
};

struct GapProbe {
  Estimate population;        // L(theta) at high precision
  double per_sample_var = 0;  // variance of the per-draw loss
  std::vector<GapRow> rows;
  LineFit fit;  // log mean_gap against log n
};

/// |L_hat(theta) - L(theta)| for a frozen model, with L_hat the score loss on n
/// fresh draws and L from population_score_loss with pop_mc draws.
template <ScoreSource S>
GapProbe generalization_gap_probe(const S& model, const GaussianMixture& target, double t,
                                  std::span<const std::size_t> n_grid, int replicates, std::size_t pop_mc,
                                  double delta, Rng& rng) {
  if (n_grid.empty()) throw ConfigError("generalization_gap_probe: empty n grid");
  if (replicates < 2) throw ConfigError("generalization_gap_probe: need >= 2 replicates");
  for (std::size_t i = 1; i < n_grid.size(); ++i)
    if (n_grid[i] <= n_grid[i - 1]) throw ConfigError("generalization_gap_probe: n grid must ascend");
  const auto pt = target.marginal_at(t);
  auto loss_at = [&](Rng& r) {
    const Vec x = draw_forward(target, t, r).x;
    return (Vec(model.score(x, t)) - pt.score(x)).squaredNorm();
  };
  GapProbe g;
  {
    std::vector<double> v(pop_mc);
    for (auto& e : v) e = loss_at(rng);
    g.population = mean_se(v);
    g.per_sample_var = sample_variance(v);
  }
  std::vector<double> ns, gaps;
  for (std::size_t n : n_grid) {
    std::vector<double> gap(static_cast<std::size_t>(replicates)), emp(gap.size());
    for (std::size_t r = 0; r < gap.size(); ++r) {
      std::vector<double> v(n);
      for (auto& e : v) e = loss_at(rng);
      emp[r] = pairwise_sum(v) / static_cast<double>(n);
      gap[r] = std::abs(emp[r] - g.population.value);
    }
    GapRow row;
    row.n = n;
    row.mean_gap = pairwise_sum(gap) / static_cast<double>(gap.size());
    row.median_gap = median(gap);
    row.quantile_gap = quantile(gap, 1.0 - delta);
    row.var_empirical = sample_variance(emp);
    g.rows.push_back(row);
    ns.push_back(static_cast<double>(n));
    gaps.push_back(row.mean_gap);
  }
  if (ns.size() >= 2) g.fit = fit_loglog(ns, gaps);
  return g;
}

// ---------------------------------------------------------------------------
// Quadratic growth

/// ||theta - theta*||^2 <= (2 / lambda_min) |L(theta) - L(theta*)| at random
/// probes around the optimum of a quadratic loss with smallest Hessian
/// eigenvalue lambda_min. analytic holds the right side, oracle the left; the
/// worst probe is returned with pass over all probes.
template <class Objective>
LemmaCheckResult quadratic_growth_check(const Objective& problem, double lambda_min, int probes, double radius,
                                        Rng& rng) {
  if (probes < 1) throw ConfigError("quadratic_growth_check: probes must be >= 1");
  if (!(lambda_min > 0.0)) throw ConfigError("quadratic_growth_check: lambda_min must be > 0");
  const Eigen::VectorXd opt = *problem.optimum();
  const double c = 2.0 / lambda_min;
  LemmaCheckResult worst{"quadratic-growth", "", 0.0, 0.0};
  worst.pass = true;
  double worst_ratio = -1.0;
  std::normal_distribution<double> n01;
  for (int p = 0; p < probes; ++p) {
    Eigen::VectorXd dir(opt.size());
    for (auto& v : dir) v = n01(rng);
    const Eigen::VectorXd th = opt + radius * dir / dir.norm() * std::uniform_real_distribution<double>(0.01, 1.0)(rng);
    const double lhs = (th - opt).squaredNorm();
    const double rhs = c * std::abs(problem.population_loss(th) - problem.population_loss(opt));
    const bool ok = lhs <= rhs * (1.0 + 1e-9) + 1e-300;
    worst.pass = worst.pass && ok;
    if (lhs / rhs > worst_ratio) {
      worst_ratio = lhs / rhs;
      worst.point = "probe " + std::to_string(p);
      worst.analytic = rhs;
      worst.oracle = lhs;
      worst.abs_err = rhs - lhs;
      worst.rel_err = (rhs - lhs) / rhs;
    }
  }
  worst.tolerance = 1e-9;
  return worst;
}

inline LemmaCheckResult quadratic_growth_check(const LinearScoreProblem& problem, int probes, double radius,
                                               Rng& rng) {
  return quadratic_growth_check(problem, problem.hessian_min_eig(), probes, radius, rng);
}

}  // namespace scorelab
