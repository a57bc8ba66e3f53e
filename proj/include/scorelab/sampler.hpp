#pragma once

// Reverse-time generation from t_K = T - kappa_stop down to t0.
//
// Step k moves a state from t_{k+1} to t_k with Delta = t_{k+1} - t_k and the
// score evaluated at t_{k+1}:
//
//   ddpm-alg1              mu = (x - beta/sigma * eps_hat) / sqrt(alpha),  out = mu + sqrt(beta) z
//                          alpha = e^{-2 Delta}, beta = 1 - alpha, sigma^2 = 1 - e^{-2 t_{k+1}},
//                          eps_hat = -sigma * s
//   exponential-integrator out = e^Delta x + 2 (e^Delta - 1) s + sqrt(e^{2 Delta} - 1) z
//   euler-maruyama         out = x + (x + 2 s) Delta + sqrt(2 Delta) z
//
// The exponential integrator solves dy = (y + 2 s) dtau + sqrt(2) dB exactly
// with s frozen over the step.

#include "scorelab/core.hpp"
#include "scorelab/ou_process.hpp"
#include "scorelab/score_net.hpp"
#include "scorelab/targets.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace scorelab {

enum class SamplerVariant { ddpm, exponential, euler_maruyama };
enum class InitKind { standard_normal, exact };

inline std::string_view to_string(SamplerVariant v) {
  switch (v) {
    case SamplerVariant::ddpm: return "ddpm-alg1";
    case SamplerVariant::exponential: return "exponential-integrator";
    case SamplerVariant::euler_maruyama: return "euler-maruyama";
  }
  return "?";
}

inline SamplerVariant parse_sampler_variant(std::string_view s) {
  if (s == "ddpm-alg1" || s == "ddpm") return SamplerVariant::ddpm;
  if (s == "exponential-integrator" || s == "exponential") return SamplerVariant::exponential;
  if (s == "euler-maruyama") return SamplerVariant::euler_maruyama;
  throw ConfigError("unknown sampler variant '" + std::string(s) + "'");
}

inline std::string_view to_string(InitKind k) { return k == InitKind::exact ? "exact" : "standard-normal"; }

inline InitKind parse_init_kind(std::string_view s) {
  if (s == "exact") return InitKind::exact;
  if (s == "standard-normal" || s == "standard_normal") return InitKind::standard_normal;
  throw ConfigError("unknown init kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Single steps

inline Vec reverse_step_ddpm(const Vec& x, std::size_t k, const Vec& eps_hat, const Vec& z, const TimeGrid& grid) {
  const auto& st = grid.step(k);
  const double one_minus_abar = -std::expm1(-2.0 * grid.times().at(k + 1));
  if (one_minus_abar == 0.0 || st.alpha == 0.0) throw DivisionGuardError("reverse_step_ddpm: alpha_bar = 1");
  const Vec mu = (x - (st.beta / std::sqrt(one_minus_abar)) * eps_hat) / std::sqrt(st.alpha);
  return mu + std::sqrt(st.beta) * z;
}

inline Vec reverse_step_exponential(const Vec& x, std::size_t k, const Vec& score, const Vec& z,
                                    const TimeGrid& grid) {
  const double dt = grid.deltas().at(k);
  const double em1 = std::expm1(dt);
  return (1.0 + em1) * x + (2.0 * em1) * score + std::sqrt(std::expm1(2.0 * dt)) * z;
}

inline Vec reverse_step_euler_maruyama(const Vec& x, std::size_t k, const Vec& score, const Vec& z,
                                       const TimeGrid& grid) {
  const double dt = grid.deltas().at(k);
  return x + (x + 2.0 * score) * dt + std::sqrt(2.0 * dt) * z;
}

/// Affine step map out = a x + c s + g z, shared by all variants.
struct StepCoefficients {
  double a = 1.0;
  double c = 0.0;
  double g = 0.0;
};

inline StepCoefficients step_coefficients(SamplerVariant v, std::size_t k, const TimeGrid& grid) {
  const double dt = grid.deltas().at(k);
  switch (v) {
    case SamplerVariant::ddpm: {
      const auto& st = grid.step(k);
      const double sa = std::sqrt(st.alpha);
      // eps_hat = -sigma s, so beta/sigma * eps_hat = -beta s
      return {1.0 / sa, st.beta / sa, std::sqrt(st.beta)};
    }
    case SamplerVariant::exponential: {
      const double em1 = std::expm1(dt);
      return {1.0 + em1, 2.0 * em1, std::sqrt(std::expm1(2.0 * dt))};
    }
    case SamplerVariant::euler_maruyama: return {1.0 + dt, 2.0 * dt, std::sqrt(2.0 * dt)};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Score adapters

/// Exact score of a mixture's OU marginal; marginals for the given times are
/// built once.
class OracleScore {
 public:
  explicit OracleScore(GaussianMixture target, std::vector<double> times = {}) : target_(std::move(target)) {
    std::sort(times.begin(), times.end());
    for (double t : times) {
      times_.push_back(t);
      marginals_.push_back(target_.marginal_at(t));
    }
  }

  Vec score(const Vec& x, double t) const {
    if (const auto* m = cached(t)) return m->score(x);
    return target_.marginal_at(t).score(x);
  }

  Eigen::MatrixXd score_batch(const Eigen::MatrixXd& X, double t) const {
    const auto* c = cached(t);
    const GaussianMixture m = c ? *c : target_.marginal_at(t);
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) out.col(i) = m.score(Vec(X.col(i)));
    return out;
  }

  const GaussianMixture& target() const { return target_; }

 private:
  const GaussianMixture* cached(double t) const {
    const auto it = std::lower_bound(times_.begin(), times_.end(), t);
    if (it != times_.end() && *it == t) return &marginals_[static_cast<std::size_t>(it - times_.begin())];
    return nullptr;
  }

  GaussianMixture target_;
  std::vector<double> times_;
  std::vector<GaussianMixture> marginals_;
};

/// base score plus a constant offset.
template <ScoreSource S>
struct OffsetScore {
  S base;
  Vec offset;
  Vec score(const Vec& x, double t) const { return Vec(base.score(x, t)) + offset; }
};

/// base score times a constant.
template <ScoreSource S>
struct ScaledScore {
  S base;
  double factor = 1.0;
  Vec score(const Vec& x, double t) const { return factor * Vec(base.score(x, t)); }
};

template <class S>
concept BatchScoreSource = ScoreSource<S> && requires(const S& s, const Eigen::MatrixXd& X, double t) {
  { s.score_batch(X, t) } -> std::convertible_to<Eigen::MatrixXd>;
};

template <ScoreSource S>
Eigen::MatrixXd score_columns(const S& s, const Eigen::MatrixXd& X, double t) {
  if constexpr (BatchScoreSource<S>) {
    return s.score_batch(X, t);
  } else {
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) out.col(i) = Vec(s.score(Vec(X.col(i)), t));
    return out;
  }
}

// ---------------------------------------------------------------------------
// Generation

struct ReverseRunSpec {
  TimeGrid grid = make_time_grid(1.0, 1, 0.5);
  std::size_t n_samples = 1;
  int dim = 0;  // used when no target is passed
  InitKind init = InitKind::exact;
  SamplerVariant variant = SamplerVariant::ddpm;
  bool zero_final_noise = true;  // z = 0 on the step that lands on t0
  std::uint64_t seed = 0;
  int workers = 1;
  std::vector<int> snapshot_steps;  // record states after these step indices
};

/// Drift-gap accounting against a shadow score evaluated on the same paths.
struct Telemetry {
  std::size_t score_calls = 0;
  std::vector<double> step_gap_mean;   // per step k: mean ||s - s_shadow||^2 at t_{k+1}
  std::vector<double> path_weighted;   // per path: sum_k ||s - s_shadow||^2 Delta_k
  std::vector<double> deltas;          // grid deltas, for alignment checks
  bool has_shadow() const { return !path_weighted.empty(); }
};

struct GenerateResult {
  Points samples;
  Telemetry telemetry;
  std::vector<std::pair<int, Points>> snapshots;
};

class SamplerDivergence : public DivergenceError {
 public:
  using DivergenceError::DivergenceError;
};

inline constexpr std::size_t kPathChunk = 256;

/// Stream tags under the master seed; chunk c of paths uses substream c.
inline constexpr std::uint64_t kInitStream = 0x1A17;
inline constexpr std::uint64_t kNoiseStream = 0x2B0C;

struct NoShadow {
  Vec score(const Vec& x, double) const { return x; }
};

/// Runs spec.n_samples reverse chains. Paths are processed in fixed chunks of
/// kPathChunk, each with its own init and noise substreams, so outputs do not
/// depend on the worker count and two runs with the same seed share noise.
template <ScoreSource S, ScoreSource Shadow = NoShadow>
GenerateResult generate(const ReverseRunSpec& spec, const S& score, const GaussianMixture* target,
                        const Shadow* shadow = nullptr) {
  if (spec.n_samples < 1) throw ConfigError("generate: n_samples must be >= 1");
  if (spec.init == InitKind::exact && !target) throw ConfigError("generate: exact init needs a target");
  const auto& grid = spec.grid;
  const int K = grid.steps();
  const int d = target ? target->dim() : spec.dim;
  if (d < 1 || d > kMaxDim) throw ConfigError("generate: dimension must be 1..3");
  const std::size_t chunks = (spec.n_samples + kPathChunk - 1) / kPathChunk;
  const std::optional<GaussianMixture> p_end =
      spec.init == InitKind::exact ? std::optional(target->marginal_at(grid.t_end())) : std::nullopt;

  GenerateResult res;
  res.samples.resize(spec.n_samples);
  std::vector<std::vector<double>> gaps(chunks, std::vector<double>(shadow ? K : 0, 0.0));
  if (shadow) res.telemetry.path_weighted.assign(spec.n_samples, 0.0);
  std::vector<std::vector<Points>> snaps(spec.snapshot_steps.size(), std::vector<Points>(chunks));

  parallel_for(chunks, spec.workers, [&](std::size_t c) {
    const std::size_t lo = c * kPathChunk, hi = std::min(spec.n_samples, lo + kPathChunk);
    const auto m = static_cast<Eigen::Index>(hi - lo);
    Rng init_rng = make_stream(derive_seed(spec.seed, kInitStream), c);
    Rng noise_rng = make_stream(derive_seed(spec.seed, kNoiseStream), c);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd X(d, m);
    for (Eigen::Index i = 0; i < m; ++i)
      X.col(i) = p_end ? p_end->sample(init_rng) : standard_normal(d, init_rng);
    Eigen::MatrixXd Z(d, m);
    for (int k = K - 1; k >= 0; --k) {
      const double t = grid.times()[static_cast<std::size_t>(k) + 1];
      const Eigen::MatrixXd s = score_columns(score, X, t);
      if (shadow) {
        const Eigen::MatrixXd sh = score_columns(*shadow, X, t);
        const double dt = grid.deltas()[static_cast<std::size_t>(k)];
        for (Eigen::Index i = 0; i < m; ++i) {
          const double g = (s.col(i) - sh.col(i)).squaredNorm();
          gaps[c][static_cast<std::size_t>(k)] += g;
          res.telemetry.path_weighted[lo + static_cast<std::size_t>(i)] += g * dt;
        }
      }
      for (Eigen::Index i = 0; i < m; ++i)
        for (int j = 0; j < d; ++j) Z(j, i) = n01(noise_rng);
      if (k == 0 && spec.zero_final_noise) Z.setZero();
      const auto co = step_coefficients(spec.variant, static_cast<std::size_t>(k), grid);
      X = co.a * X + co.c * s + co.g * Z;
      if (!X.allFinite())
        throw SamplerDivergence("generate: non-finite state at step " + std::to_string(k), static_cast<std::size_t>(k));
      for (std::size_t q = 0; q < spec.snapshot_steps.size(); ++q)
        if (spec.snapshot_steps[q] == k)
          for (Eigen::Index i = 0; i < m; ++i) snaps[q][c].push_back(Vec(X.col(i)));
    }
    for (Eigen::Index i = 0; i < m; ++i) res.samples[lo + static_cast<std::size_t>(i)] = X.col(i);
  });

  res.telemetry.score_calls = spec.n_samples * static_cast<std::size_t>(K) * (shadow ? 2 : 1);
  res.telemetry.deltas = grid.deltas();
  if (shadow) {
    res.telemetry.step_gap_mean.assign(static_cast<std::size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
      std::vector<double> per_chunk(chunks);
      for (std::size_t c = 0; c < chunks; ++c) per_chunk[c] = gaps[c][static_cast<std::size_t>(k)];
      res.telemetry.step_gap_mean[static_cast<std::size_t>(k)] =
          pairwise_sum(per_chunk) / static_cast<double>(spec.n_samples);
    }
  }
  for (std::size_t q = 0; q < spec.snapshot_steps.size(); ++q) {
    Points all;
    for (auto& part : snaps[q]) all.insert(all.end(), part.begin(), part.end());
    res.snapshots.emplace_back(spec.snapshot_steps[q], std::move(all));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Exact Gaussian propagation

struct GaussianMoments {
  Vec mean;
  Mat cov;
};

/// Pushes N(mean, cov) through the reverse chain when the score at every grid
/// time is affine, s(x, t) = A(t) x + b(t). The output law is then Gaussian.
template <class AffineAt>
GaussianMoments propagate_gaussian(const TimeGrid& grid, SamplerVariant variant, bool zero_final_noise,
                                   AffineAt&& affine_at, GaussianMoments init) {
  const int d = static_cast<int>(init.mean.size());
  for (int k = grid.steps() - 1; k >= 0; --k) {
    const double t = grid.times()[static_cast<std::size_t>(k) + 1];
    const LinearScoreModel s = affine_at(t);
    const auto co = step_coefficients(variant, static_cast<std::size_t>(k), grid);
    const Mat F = co.a * Mat::Identity(d, d) + co.c * s.A;
    init.mean = F * init.mean + co.c * s.b;
    init.cov = F * init.cov * F.transpose();
    if (!(k == 0 && zero_final_noise)) init.cov += co.g * co.g * Mat::Identity(d, d);
  }
  return init;
}

/// Initial law at t_K for the given init kind.
inline GaussianMoments init_moments(InitKind kind, const GaussianMixture& target, double t_end) {
  if (kind == InitKind::standard_normal)
    return {Vec::Zero(target.dim()), Mat::Identity(target.dim(), target.dim())};
  const auto [m, c] = marginal_moments(target, t_end);
  return {m, c};
}

}  // namespace scorelab
