#pragma once

// Total-variation estimators, energy distance, path KL and the four-leg TV
// split of the generation error.

#include "scorelab/core.hpp"
#include "scorelab/normal.hpp"
#include "scorelab/ou_process.hpp"
#include "scorelab/sampler.hpp"
#include "scorelab/score_net.hpp"
#include "scorelab/targets.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scorelab {

enum class TVMethod { histogram, quadrature_analytic, closed_form_gaussian };

inline std::string_view to_string(TVMethod m) {
  switch (m) {
    case TVMethod::histogram: return "histogram";
    case TVMethod::quadrature_analytic: return "quadrature-analytic";
    case TVMethod::closed_form_gaussian: return "closed-form-gaussian";
  }
  return "?";
}

struct TVEstimate {
  double value = 0.0;
  TVMethod method = TVMethod::histogram;
  int bins = 0;  // per axis, histogram only
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::optional<double> value_half;    // at bins / 2
  std::optional<double> value_double;  // at 2 bins
  double se = 0.0;
  double bias_bound = 0.0;  // quadrature error estimate or bin-sensitivity spread
};

// ---------------------------------------------------------------------------
// Histogram

struct Box {
  Vec lo;
  Vec hi;
};

/// Per-axis [0.05%, 99.95%] quantiles of the pooled sample.
inline Box pooled_box(std::span<const Vec> a, std::span<const Vec> b) {
  const int d = static_cast<int>(a.front().size());
  Box box{Vec(d), Vec(d)};
  std::vector<double> col(a.size() + b.size());
  for (int j = 0; j < d; ++j) {
    std::size_t i = 0;
    for (const auto& x : a) col[i++] = x[j];
    for (const auto& x : b) col[i++] = x[j];
    box.lo[j] = quantile(col, 0.0005);
    box.hi[j] = quantile(col, 0.9995);
    if (!(box.hi[j] > box.lo[j])) box.hi[j] = box.lo[j] + 1.0;
  }
  return box;
}

inline int default_bins(std::size_t n, int d) {
  return static_cast<int>(std::ceil(std::pow(static_cast<double>(n), 1.0 / (d + 2))));
}

namespace detail {

inline void check_samples(std::span<const Vec> s, const char* who) {
  if (s.empty()) throw ContractError(std::string(who) + ": empty sample set");
  if (s.size() < 1000) throw ContractError(std::string(who) + ": need at least 1e3 samples");
  const auto d = s.front().size();
  if (d < 1 || d > kMaxDim) throw DomainError(std::string(who) + ": dimension must be 1..3");
  for (const auto& x : s)
    if (x.size() != d) throw ContractError(std::string(who) + ": mixed dimensions");
}

// Out-of-box points fall into the edge cells.
inline std::size_t cell_of(const Vec& x, const Box& box, int bins) {
  std::size_t idx = 0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double u = (x[j] - box.lo[j]) / (box.hi[j] - box.lo[j]);
    const int c = std::clamp(static_cast<int>(std::floor(u * bins)), 0, bins - 1);
    idx = idx * static_cast<std::size_t>(bins) + static_cast<std::size_t>(c);
  }
  return idx;
}

inline std::vector<double> cell_frequencies(std::span<const Vec> s, const Box& box, int bins) {
  const int d = static_cast<int>(box.lo.size());
  std::size_t cells = 1;
  for (int j = 0; j < d; ++j) cells *= static_cast<std::size_t>(bins);
  if (cells > 50'000'000) throw ConfigError("tv_histogram: too many cells");
  std::vector<double> f(cells, 0.0);
  for (const auto& x : s) f[cell_of(x, box, bins)] += 1.0;
  for (double& v : f) v /= static_cast<double>(s.size());
  return f;
}

inline double half_l1(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> diff(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) diff[i] = std::abs(p[i] - q[i]);
  return std::clamp(0.5 * pairwise_sum(diff), 0.0, 1.0);
}

inline double histogram_tv_at(std::span<const Vec> a, std::span<const Vec> b, const Box& box, int bins) {
  return half_l1(cell_frequencies(a, box, bins), cell_frequencies(b, box, bins));
}

inline void fill_sensitivity(TVEstimate& e, const std::function<double(int)>& at) {
  e.value_half = at(std::max(1, e.bins / 2));
  e.value_double = at(2 * e.bins);
  e.bias_bound = std::max(std::abs(*e.value_half - e.value), std::abs(*e.value_double - e.value));
}

}  // namespace detail

/// 1/2 sum over cells |p_a - p_b| on the pooled box. bins = 0 picks
/// ceil(n^{1/(d+2)}) with n the smaller sample size.
inline TVEstimate tv_histogram(std::span<const Vec> a, std::span<const Vec> b, int bins = 0) {
  detail::check_samples(a, "tv_histogram");
  detail::check_samples(b, "tv_histogram");
  const int d = static_cast<int>(a.front().size());
  if (b.front().size() != d) throw ContractError("tv_histogram: sample sets differ in dimension");
  if (bins == 0) bins = default_bins(std::min(a.size(), b.size()), d);
  if (bins < 1) throw ConfigError("tv_histogram: bins must be >= 1");
  const Box box = pooled_box(a, b);
  TVEstimate e;
  e.method = TVMethod::histogram;
  e.bins = bins;
  e.n_a = a.size();
  e.n_b = b.size();
  e.value = detail::histogram_tv_at(a, b, box, bins);
  detail::fill_sensitivity(e, [&](int k) { return detail::histogram_tv_at(a, b, box, k); });
  return e;
}

/// Histogram TV of a 1d sample against a mixture's exact cell probabilities.
inline TVEstimate tv_histogram(std::span<const Vec> samples, const GaussianMixture& target, int bins = 0) {
  detail::check_samples(samples, "tv_histogram");
  if (target.dim() != 1 || samples.front().size() != 1)
    throw DomainError("tv_histogram: analytic reference needs d = 1");
  if (bins == 0) bins = default_bins(samples.size(), 1);
  if (bins < 1) throw ConfigError("tv_histogram: bins must be >= 1");
  const Box box = pooled_box(samples, samples);
  auto at = [&](int k) {
    const auto freq = detail::cell_frequencies(samples, box, k);
    std::vector<double> prob(static_cast<std::size_t>(k));
    const double w = (box.hi[0] - box.lo[0]) / k;
    double prev = 0.0;
    for (int c = 0; c < k; ++c) {
      const double next = c + 1 == k ? 1.0 : target.cdf_1d(box.lo[0] + (c + 1) * w);
      prob[static_cast<std::size_t>(c)] = next - prev;
      prev = next;
    }
    return detail::half_l1(freq, prob);
  };
  TVEstimate e;
  e.method = TVMethod::histogram;
  e.bins = bins;
  e.n_a = e.n_b = samples.size();
  e.value = at(bins);
  detail::fill_sensitivity(e, at);
  return e;
}

// ---------------------------------------------------------------------------
// Quadrature

inline constexpr double kQuadTol = 1e-6;
inline constexpr double kCoverageTol = 1e-4;

/// 1/2 integral of |f_a - f_b| over [lo, hi] by adaptive Gauss-Kronrod.
template <class Fa, class Fb>
TVEstimate tv_quadrature_1d(Fa&& fa, Fb&& fb, double lo, double hi) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 61>;
  auto mass = [&](auto& f) { return GK::integrate([&](double x) { return f(x); }, lo, hi, 20, 1e-12); };
  const double ma = mass(fa), mb = mass(fb);
  if (1.0 - ma > kCoverageTol || 1.0 - mb > kCoverageTol)
    throw CoverageError("tv_quadrature: box misses more than 1e-4 of the mass");
  // fa rides along so the relative tolerance acts as an absolute one; with
  // fa == fb the bare integrand is pure roundoff and never converges.
  double err = 0.0;
  const double v =
      GK::integrate([&](double x) { return std::abs(fa(x) - fb(x)) + fa(x); }, lo, hi, 25, 1e-10, &err) - ma;
  TVEstimate e;
  e.method = TVMethod::quadrature_analytic;
  e.value = std::clamp(0.5 * v, 0.0, 1.0);
  e.bias_bound = 0.5 * err;
  if (e.bias_bound > kQuadTol) throw NumericError("tv_quadrature: error estimate above 1e-6");
  return e;
}

/// Same on the rectangle [lo, hi] by nested Gauss-Kronrod.
template <class Fa, class Fb>
TVEstimate tv_quadrature_2d(Fa&& fa, Fb&& fb, const Vec& lo, const Vec& hi) {
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  auto integrate2 = [&](auto&& f, double* err_out) {
    double worst = 0.0;
    const double v = GK::integrate(
        [&](double x) {
          double e = 0.0;
          const double inner = GK::integrate(
              [&](double y) { return f((Vec(2) << x, y).finished()); }, lo[1], hi[1], 15, 1e-9, &e);
          worst = std::max(worst, e);
          return inner;
        },
        lo[0], hi[0], 15, 1e-9, err_out);
    if (err_out) *err_out += worst * (hi[0] - lo[0]);
    return v;
  };
  const double ma = integrate2(fa, nullptr), mb = integrate2(fb, nullptr);
  if (1.0 - ma > kCoverageTol || 1.0 - mb > kCoverageTol)
    throw CoverageError("tv_quadrature: box misses more than 1e-4 of the mass");
  double err = 0.0;
  const double v = integrate2([&](const Vec& x) { return std::abs(fa(x) - fb(x)) + fa(x); }, &err) - ma;
  TVEstimate e;
  e.method = TVMethod::quadrature_analytic;
  e.value = std::clamp(0.5 * v, 0.0, 1.0);
  e.bias_bound = 0.5 * err;
  return e;
}

/// Box covering every component to 12 standard deviations.
inline Box mixture_box(const GaussianMixture& a, const GaussianMixture& b, double radius = 12.0) {
  const int d = a.dim();
  Box box{Vec::Constant(d, std::numeric_limits<double>::infinity()),
          Vec::Constant(d, -std::numeric_limits<double>::infinity())};
  for (const auto* g : {&a, &b})
    for (std::size_t i = 0; i < g->components(); ++i)
      for (int j = 0; j < d; ++j) {
        const double s = std::sqrt(g->covariances()[i](j, j));
        box.lo[j] = std::min(box.lo[j], g->means()[i][j] - radius * s);
        box.hi[j] = std::max(box.hi[j], g->means()[i][j] + radius * s);
      }
  return box;
}

/// TV between two mixtures; d = 1 or 2.
inline TVEstimate tv_quadrature(const GaussianMixture& a, const GaussianMixture& b) {
  if (a.dim() != b.dim()) throw ContractError("tv_quadrature: dimension mismatch");
  const Box box = mixture_box(a, b);
  if (a.dim() == 1) {
    auto fa = [&](double x) { return a.density(Vec::Constant(1, x)); };
    auto fb = [&](double x) { return b.density(Vec::Constant(1, x)); };
    return tv_quadrature_1d(fa, fb, box.lo[0], box.hi[0]);
  }
  if (a.dim() == 2) {
    auto fa = [&](const Vec& x) { return a.density(x); };
    auto fb = [&](const Vec& x) { return b.density(x); };
    return tv_quadrature_2d(fa, fb, box.lo, box.hi);
  }
  throw DomainError("tv_quadrature: d = 3 is histogram only");
}

// ---------------------------------------------------------------------------
// Gaussian closed form

namespace detail {

// P(lo < X < hi) for X ~ N(m, s^2), using upper tails on the right half.
inline double interval_prob(double m, double s, double lo, double hi) {
  const double zl = (lo - m) / s, zh = (hi - m) / s;
  if (zl >= 0.0) return normal::upper_tail(zl) - normal::upper_tail(zh);
  if (zh <= 0.0) return normal::cdf(zh) - normal::cdf(zl);
  return 1.0 - normal::cdf(zl) - normal::upper_tail(zh);
}

}  // namespace detail

/// Exact TV between N(m1, v1) and N(m2, v2) from the crossing points of the
/// two densities.
inline double tv_gaussian_1d(double m1, double v1, double m2, double v2) {
  if (!(v1 > 0.0 && v2 > 0.0)) throw DomainError("tv_gaussian_1d: variances must be positive");
  const double s1 = std::sqrt(v1), s2 = std::sqrt(v2);
  // log p1 - log p2 = a x^2 + b x + c
  const double a = 0.5 / v2 - 0.5 / v1;
  const double b = m1 / v1 - m2 / v2;
  const double c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 - 0.5 * std::log(v1 / v2);
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cuts{-inf};
  if (a == 0.0) {
    if (b == 0.0) return 0.0;
    cuts.push_back(-c / b);
  } else {
    const double disc = b * b - 4.0 * a * c;
    if (disc > 0.0) {
      const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
      double r1 = q / a, r2 = q != 0.0 ? c / q : -r1;
      if (r1 > r2) std::swap(r1, r2);
      cuts.push_back(r1);
      cuts.push_back(r2);
    }
  }
  cuts.push_back(inf);
  double tv = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double lo = cuts[i], hi = cuts[i + 1];
    const double d = detail::interval_prob(m1, s1, lo, hi) - detail::interval_prob(m2, s2, lo, hi);
    if (d > 0.0) tv += d;
  }
  return std::clamp(tv, 0.0, 1.0);
}

namespace detail {

inline std::pair<double, double> fit_gaussian_1d(std::span<const Vec> s) {
  std::vector<double> v(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) v[i] = s[i][0];
  return {pairwise_sum(v) / static_cast<double>(v.size()), sample_variance(v)};
}

inline constexpr std::size_t kJackknifeBlocks = 20;

// Delete-one-block jackknife standard error of stat(sample).
template <class Stat>
double jackknife_se(std::span<const Vec> s, Stat&& stat) {
  const std::size_t g = kJackknifeBlocks, n = s.size();
  std::vector<double> th(g);
  for (std::size_t k = 0; k < g; ++k) {
    const std::size_t lo = k * n / g, hi = (k + 1) * n / g;
    std::vector<Vec> rest;
    rest.reserve(n - (hi - lo));
    rest.insert(rest.end(), s.begin(), s.begin() + static_cast<std::ptrdiff_t>(lo));
    rest.insert(rest.end(), s.begin() + static_cast<std::ptrdiff_t>(hi), s.end());
    th[k] = stat(std::span<const Vec>(rest));
  }
  const double mean = pairwise_sum(th) / static_cast<double>(g);
  double ss = 0.0;
  for (double v : th) ss += (v - mean) * (v - mean);
  return std::sqrt((static_cast<double>(g) - 1.0) / static_cast<double>(g) * ss);
}

}  // namespace detail

/// TV between the Gaussian fitted to a 1d sample and N(mean, var). Exact when
/// the sampled law is Gaussian, e.g. reverse chains driven by affine scores.
inline TVEstimate tv_fitted_gaussian(std::span<const Vec> samples, double mean, double var) {
  detail::check_samples(samples, "tv_fitted_gaussian");
  if (samples.front().size() != 1) throw DomainError("tv_fitted_gaussian: d = 1 only");
  auto stat = [&](std::span<const Vec> s) {
    const auto [m, v] = detail::fit_gaussian_1d(s);
    return tv_gaussian_1d(m, v, mean, var);
  };
  TVEstimate e;
  e.method = TVMethod::closed_form_gaussian;
  e.n_a = samples.size();
  e.value = stat(samples);
  e.se = detail::jackknife_se(samples, stat);
  return e;
}

/// TV between Gaussians fitted to two 1d samples.
inline TVEstimate tv_fitted_gaussian(std::span<const Vec> a, std::span<const Vec> b) {
  detail::check_samples(a, "tv_fitted_gaussian");
  detail::check_samples(b, "tv_fitted_gaussian");
  if (a.front().size() != 1 || b.front().size() != 1) throw DomainError("tv_fitted_gaussian: d = 1 only");
  const auto [mb, vb] = detail::fit_gaussian_1d(b);
  const auto [ma, va] = detail::fit_gaussian_1d(a);
  auto sa = [&](std::span<const Vec> s) {
    const auto [m, v] = detail::fit_gaussian_1d(s);
    return tv_gaussian_1d(m, v, mb, vb);
  };
  auto sb = [&](std::span<const Vec> s) {
    const auto [m, v] = detail::fit_gaussian_1d(s);
    return tv_gaussian_1d(ma, va, m, v);
  };
  TVEstimate e;
  e.method = TVMethod::closed_form_gaussian;
  e.n_a = a.size();
  e.n_b = b.size();
  e.value = tv_gaussian_1d(ma, va, mb, vb);
  // paired runs are correlated; adding the variances overstates the se
  const double ea = detail::jackknife_se(a, sa), eb = detail::jackknife_se(b, sb);
  e.se = std::sqrt(ea * ea + eb * eb);
  return e;
}

// ---------------------------------------------------------------------------
// Energy distance

namespace detail {

// sum_{i<j} |x_i - x_j| for sorted x
inline double sorted_pair_sum(const std::vector<double>& x) {
  std::vector<double> t(x.size());
  const double n = static_cast<double>(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) t[k] = x[k] * (2.0 * static_cast<double>(k) - n + 1.0);
  return pairwise_sum(t);
}

inline double energy_1d(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> pool;
  pool.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(pool));
  const double wa = sorted_pair_sum(a), wb = sorted_pair_sum(b), wp = sorted_pair_sum(pool);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double cross = wp - wa - wb;
  return 2.0 * cross / (na * nb) - 2.0 * wa / (na * na) - 2.0 * wb / (nb * nb);
}

inline double energy_direct(std::span<const Vec> a, std::span<const Vec> b) {
  auto mean_dist = [](std::span<const Vec> p, std::span<const Vec> q) {
    std::vector<double> rows(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      double s = 0.0;
      for (const auto& y : q) s += (p[i] - y).norm();
      rows[i] = s;
    }
    return pairwise_sum(rows) / (static_cast<double>(p.size()) * static_cast<double>(q.size()));
  };
  return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

}  // namespace detail

/// V-statistic 2E|X - Y| - E|X - X'| - E|Y - Y'|; O(n log n) in d = 1.
inline double energy_distance(std::span<const Vec> a, std::span<const Vec> b) {
  if (a.empty() || b.empty()) throw ContractError("energy_distance: empty sample set");
  if (a.front().size() != b.front().size()) throw ContractError("energy_distance: dimension mismatch");
  if (a.front().size() == 1) {
    std::vector<double> xa(a.size()), xb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) xa[i] = a[i][0];
    for (std::size_t i = 0; i < b.size(); ++i) xb[i] = b[i][0];
    return detail::energy_1d(std::move(xa), std::move(xb));
  }
  return detail::energy_direct(a, b);
}

struct TwoSampleTest {
  double statistic = 0.0;
  double p_value = 1.0;
  int permutations = 0;
};

/// Permutation test on the energy distance.
inline TwoSampleTest energy_test(std::span<const Vec> a, std::span<const Vec> b, int permutations, Rng& rng) {
  if (permutations < 1) throw ConfigError("energy_test: permutations must be >= 1");
  const double obs = energy_distance(a, b);
  std::vector<Vec> pool(a.begin(), a.end());
  pool.insert(pool.end(), b.begin(), b.end());
  int above = 0;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::span<const Vec> all(pool);
    if (energy_distance(all.first(a.size()), all.subspan(a.size())) >= obs) ++above;
  }
  return {obs, (1.0 + above) / (1.0 + permutations), permutations};
}

// ---------------------------------------------------------------------------
// Path KL

struct PathKL {
  Estimate kl;
  double tv_pinsker = 0.0;  // sqrt(kl / 2)
};

/// KL between the reverse chains driven by the sampled score and the shadow
/// score, from generate() telemetry: sum_k E||s - s_shadow||^2 Delta_k with
/// the diffusion coefficient 2 of the reverse SDE folded in.
inline PathKL girsanov_kl(const Telemetry& tel, const TimeGrid& grid) {
  if (!tel.has_shadow()) throw ContractError("girsanov_kl: run carried no shadow score");
  if (tel.deltas != grid.deltas() || tel.step_gap_mean.size() != grid.deltas().size())
    throw ContractError("girsanov_kl: telemetry not aligned with grid");
  PathKL out;
  out.kl = mean_se(tel.path_weighted);
  out.tv_pinsker = std::sqrt(std::max(0.0, out.kl.value) / 2.0);
  return out;
}

/// Monte-Carlo KL(P_a || P_b) between Euler-Maruyama chains with scores a
/// and b, by averaging the path log-likelihood ratio under P_a. Every step is
/// Gaussian with variance 2 Delta, so the per-step log ratio is
/// ((y' - mu_b)^2 - (y' - mu_a)^2) / (4 Delta).
template <ScoreSource Sa, ScoreSource Sb>
PathKL em_path_kl(const TimeGrid& grid, const Sa& sa, const Sb& sb, const GaussianMixture& target,
                  std::size_t n_paths, std::uint64_t seed, int workers = 1) {
  if (n_paths < 2) throw ConfigError("em_path_kl: need at least 2 paths");
  const int K = grid.steps(), d = target.dim();
  const auto pT = target.marginal_at(grid.t_end());
  const std::size_t chunks = (n_paths + kPathChunk - 1) / kPathChunk;
  std::vector<double> llr(n_paths, 0.0);
  parallel_for(chunks, workers, [&](std::size_t c) {
    Rng init_rng = make_stream(derive_seed(seed, kInitStream), c);
    Rng noise_rng = make_stream(derive_seed(seed, kNoiseStream), c);
    std::normal_distribution<double> n01;
    const std::size_t lo = c * kPathChunk, hi = std::min(n_paths, lo + kPathChunk);
    for (std::size_t p = lo; p < hi; ++p) {
      Vec y = pT.sample(init_rng);
      double acc = 0.0;
      for (int k = K - 1; k >= 0; --k) {
        const double t = grid.times()[static_cast<std::size_t>(k) + 1];
        const double dt = grid.deltas()[static_cast<std::size_t>(k)];
        const Vec mu_a = y + (y + 2.0 * Vec(sa.score(y, t))) * dt;
        const Vec mu_b = y + (y + 2.0 * Vec(sb.score(y, t))) * dt;
        Vec z(d);
        for (int j = 0; j < d; ++j) z[j] = n01(noise_rng);
        const Vec next = mu_a + std::sqrt(2.0 * dt) * z;
        acc += ((next - mu_b).squaredNorm() - (next - mu_a).squaredNorm()) / (4.0 * dt);
        y = next;
      }
      llr[p] = acc;
    }
  });
  PathKL out;
  out.kl = mean_se(llr);
  out.tv_pinsker = std::sqrt(std::max(0.0, out.kl.value) / 2.0);
  return out;
}

// ---------------------------------------------------------------------------
// Four-leg split

inline constexpr int kReferenceSteps = 8192;

struct TvLegs {
  TVEstimate leg_discretization;  // TV(p_t0, p^dis_t0)
  TVEstimate leg_score;           // TV(p^dis_t0, p~_t0)
  TVEstimate leg_init;            // TV(p~_t0, p^_t0)
  TVEstimate total_direct;        // TV(p_t0, p^_t0)
  std::optional<TVEstimate> direct_analytic;  // histogram mode, d = 1: against exact cell masses
  std::optional<PathKL> girsanov;  // Pinsker bound on leg_score
  double reference_residual = 0.0;  // TV(p_t0, K_ref chain) in closed form, else 0
  bool triangle_ok = true;
};

inline bool triangle_holds(const TvLegs& l) {
  const double se = std::sqrt(l.leg_discretization.se * l.leg_discretization.se + l.leg_score.se * l.leg_score.se +
                              l.leg_init.se * l.leg_init.se + l.total_direct.se * l.total_direct.se);
  const double slack = 1e-12 + 3.0 * se;
  return l.total_direct.value <= l.leg_discretization.value + l.leg_score.value + l.leg_init.value + slack;
}

namespace detail {

inline TVEstimate exact_tv(double m1, double v1, double m2, double v2) {
  TVEstimate e;
  e.method = TVMethod::closed_form_gaussian;
  e.value = tv_gaussian_1d(m1, v1, m2, v2);
  return e;
}

}  // namespace detail

/// Legs for a 1d Gaussian target and an affine learned score, all in closed
/// form by moment propagation. `learned_at(t)` returns the learned affine
/// score at grid time t.
template <class AffineAt>
TvLegs tv_legs_closed_form(const GaussianMixture& target, AffineAt&& learned_at, const TimeGrid& grid,
                           SamplerVariant variant = SamplerVariant::ddpm, bool zero_final_noise = true) {
  if (target.dim() != 1 || !target.is_single_gaussian())
    throw DomainError("tv_legs_closed_form: needs a 1d Gaussian target");
  auto oracle = [&](double t) { return population_linear_minimizer(target, t); };
  const auto exact = init_moments(InitKind::exact, target, grid.t_end());
  const auto standard = init_moments(InitKind::standard_normal, target, grid.t_end());
  const auto [m0, c0] = marginal_moments(target, grid.t0());
  const auto dis = propagate_gaussian(grid, variant, zero_final_noise, oracle, exact);
  const auto tilde = propagate_gaussian(grid, variant, zero_final_noise, learned_at, exact);
  const auto hat = propagate_gaussian(grid, variant, zero_final_noise, learned_at, standard);
  const auto ref = propagate_gaussian(make_time_grid(grid.horizon(), kReferenceSteps, grid.t0(), grid.kappa_stop(),
                                                     grid.spacing()),
                                      variant, zero_final_noise, oracle, exact);
  TvLegs l;
  l.leg_discretization = detail::exact_tv(m0[0], c0(0, 0), dis.mean[0], dis.cov(0, 0));
  l.leg_score = detail::exact_tv(dis.mean[0], dis.cov(0, 0), tilde.mean[0], tilde.cov(0, 0));
  l.leg_init = detail::exact_tv(tilde.mean[0], tilde.cov(0, 0), hat.mean[0], hat.cov(0, 0));
  l.total_direct = detail::exact_tv(m0[0], c0(0, 0), hat.mean[0], hat.cov(0, 0));
  l.reference_residual = tv_gaussian_1d(m0[0], c0(0, 0), ref.mean[0], ref.cov(0, 0));
  l.triangle_ok = triangle_holds(l);
  return l;
}

/// Legs from paired sampler runs on a shared noise stream, TV by histogram.
/// The continuous reference is a kReferenceSteps oracle chain and stands in
/// for p_t0 in leg_discretization and total_direct.
template <ScoreSource Learned>
TvLegs tv_legs(const GaussianMixture& target, const Learned& learned, const TimeGrid& grid, std::size_t n_samples,
               std::uint64_t seed, SamplerVariant variant = SamplerVariant::ddpm, int workers = 1,
               int bins = 0) {
  const auto ref_grid =
      make_time_grid(grid.horizon(), kReferenceSteps, grid.t0(), grid.kappa_stop(), grid.spacing());
  std::vector<double> all_times = grid.times();
  all_times.insert(all_times.end(), ref_grid.times().begin(), ref_grid.times().end());
  std::sort(all_times.begin(), all_times.end());
  all_times.erase(std::unique(all_times.begin(), all_times.end()), all_times.end());
  const OracleScore oracle(target, all_times);

  ReverseRunSpec spec;
  spec.grid = grid;
  spec.n_samples = n_samples;
  spec.variant = variant;
  spec.seed = seed;
  spec.workers = workers;
  spec.init = InitKind::exact;
  ReverseRunSpec ref_spec = spec;
  ref_spec.grid = ref_grid;

  const auto ref = generate(ref_spec, oracle, &target);
  const auto dis = generate(spec, oracle, &target);
  const auto tilde = generate(spec, learned, &target, &oracle);
  spec.init = InitKind::standard_normal;
  const auto hat = generate(spec, learned, &target);

  // one box and binning for all legs keeps the triangle exact on cells
  std::vector<Vec> pool = ref.samples;
  for (const auto* s : {&dis.samples, &tilde.samples, &hat.samples}) pool.insert(pool.end(), s->begin(), s->end());
  const Box box = pooled_box(pool, pool);
  if (bins == 0) bins = default_bins(n_samples, target.dim());
  auto leg = [&](const Points& a, const Points& b) {
    TVEstimate e;
    e.method = TVMethod::histogram;
    e.bins = bins;
    e.n_a = a.size();
    e.n_b = b.size();
    e.value = detail::histogram_tv_at(a, b, box, bins);
    detail::fill_sensitivity(e, [&](int k) { return detail::histogram_tv_at(a, b, box, k); });
    return e;
  };
  TvLegs l;
  l.leg_discretization = leg(ref.samples, dis.samples);
  l.leg_score = leg(dis.samples, tilde.samples);
  l.leg_init = leg(tilde.samples, hat.samples);
  l.total_direct = leg(ref.samples, hat.samples);
  if (target.dim() == 1) l.direct_analytic = tv_histogram(hat.samples, target.marginal_at(grid.t0()), bins);
  l.girsanov = girsanov_kl(tilde.telemetry, grid);
  l.triangle_ok = triangle_holds(l);
  return l;
}

}  // namespace scorelab
