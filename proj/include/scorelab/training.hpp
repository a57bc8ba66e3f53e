#pragma once

// Denoising score matching objectives, SGD with the increasing batch schedule
// b_i = ceil(beta * i), a synthetic PL testbed, and curvature/noise probes.

#include "scorelab/core.hpp"
#include "scorelab/ou_process.hpp"
#include "scorelab/score_net.hpp"
#include "scorelab/targets.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scorelab {

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

namespace detail {

inline Eigen::VectorXd pairwise_sum_vec(std::span<const Eigen::VectorXd> v) {
  if (v.size() == 1) return v.front();
  const std::size_t h = v.size() / 2;
  return pairwise_sum_vec(v.first(h)) + pairwise_sum_vec(v.subspan(h));
}

inline double checked_sigma(const ForwardDraw& d, const TimeGrid* grid) {
  if (!d.x0.allFinite() || !d.noise.allFinite() || !std::isfinite(d.t))
    throw NumericError("denoising_loss: non-finite batch entry");
  if (d.x0.size() != d.noise.size()) throw DomainError("denoising_loss: x0 and noise differ in dimension");
  if (grid && (d.t < grid->t0() - 1e-12 || d.t > grid->t_end() + 1e-12))
    throw ContractError("denoising_loss: time outside the grid range");
  const double s2 = ou_marginal_params(d.t).sigma_sq;
  if (s2 == 0.0) throw DivisionGuardError("denoising_loss: sigma_t = 0");
  return std::sqrt(s2);
}

}  // namespace detail

inline constexpr std::size_t kLossChunk = 128;

/// Mean of ||noise - eps_theta(x_t, t)||^2 and its parameter gradient.
/// Chunks are reduced pairwise, so the result does not depend on `workers`.
inline LossAndGrad denoising_loss(const MlpScoreModel& model, std::span<const ForwardDraw> batch,
                                  const TimeGrid* grid = nullptr, int workers = 1) {
  if (batch.empty()) throw ContractError("denoising_loss: empty batch");
  for (const auto& d : batch) detail::checked_sigma(d, grid);
  const std::size_t chunks = (batch.size() + kLossChunk - 1) / kLossChunk;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const int dim = model.dim();
  std::vector<double> losses(chunks);
  std::vector<Eigen::VectorXd> grads(chunks);
  parallel_for(chunks, workers, [&](std::size_t c) {
    const std::size_t lo = c * kLossChunk, hi = std::min(batch.size(), lo + kLossChunk);
    const auto m = static_cast<Eigen::Index>(hi - lo);
    Eigen::MatrixXd u(dim + 3, m), e(dim, m);
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& d = batch[i];
      const auto col = static_cast<Eigen::Index>(i - lo);
      u.col(col) = time_features(forward_sample(d.x0, d.t, d.noise), d.t);
      e.col(col) = d.noise;
    }
    MlpScoreModel::Tape tape;
    const Eigen::MatrixXd r = model.forward(u, &tape) - e;
    losses[c] = r.squaredNorm();
    grads[c] = Eigen::VectorXd::Zero(model.params().size());
    model.backward(tape, (2.0 * inv_n) * r, grads[c]);
  });
  return {pairwise_sum(losses) * inv_n, detail::pairwise_sum_vec(grads)};
}

/// Same objective for the linear family, where eps_theta(x, t) = -sigma_t (A x + b).
/// Gradient is laid out as LinearScoreModel::flat().
inline LossAndGrad denoising_loss(const LinearScoreModel& model, std::span<const ForwardDraw> batch,
                                  const TimeGrid* grid = nullptr) {
  if (batch.empty()) throw ContractError("denoising_loss: empty batch");
  const int d = model.dim();
  std::vector<double> losses(batch.size());
  Mat gA = Mat::Zero(d, d);
  Vec gb = Vec::Zero(d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& dr = batch[i];
    const double sigma = detail::checked_sigma(dr, grid);
    const Vec x = forward_sample(dr.x0, dr.t, dr.noise);
    const Vec r = dr.noise + sigma * model(x);
    losses[i] = r.squaredNorm();
    gA += (2.0 * sigma) * r * x.transpose();
    gb += (2.0 * sigma) * r;
  }
  const double n = static_cast<double>(batch.size());
  LinearScoreModel g{gA / n, gb / n};
  return {pairwise_sum(losses) / n, g.flat()};
}

/// Monte-Carlo estimate of E_{x ~ p_t} ||s(x, t) - grad log p_t(x)||^2.
template <ScoreSource S>
Estimate population_score_loss(const S& model, const GaussianMixture& target, double t, std::size_t mc_n, Rng& rng) {
  if (mc_n < 100) throw ConfigError("population_score_loss: mc_n must be >= 100");
  const auto pt = target.marginal_at(t);
  std::vector<double> v(mc_n);
  for (auto& e : v) {
    const Vec x = draw_forward(target, t, rng).x;
    e = (Vec(model.score(x, t)) - pt.score(x)).squaredNorm();
  }
  return mean_se(v);
}

// ---------------------------------------------------------------------------
// Objectives

/// Loss with unbiased minibatch gradients and an evaluable population loss.
template <class O>
concept StochasticObjective = requires(O& o, const Eigen::VectorXd& th, std::size_t b, Rng& r) {
  { o.sample(th, b, r) } -> std::same_as<LossAndGrad>;
  { o.population_loss(th) } -> std::convertible_to<double>;
  { o.optimal_loss() } -> std::convertible_to<std::optional<double>>;
};

/// Additionally exposes the exact population gradient and, if known, the minimizer.
template <class O>
concept DifferentiableObjective = StochasticObjective<O> && requires(O& o, const Eigen::VectorXd& th) {
  { o.population_gradient(th) } -> std::convertible_to<Eigen::VectorXd>;
  { o.optimum() } -> std::convertible_to<std::optional<Eigen::VectorXd>>;
};

/// L(theta) = 1/2 (theta - theta*)^T H (theta - theta*) with additive Gaussian
/// gradient noise of total variance sigma_sq / b, split evenly over coordinates.
class QuadraticTestbed {
 public:
  QuadraticTestbed(Eigen::MatrixXd hessian, Eigen::VectorXd minimizer, double noise_var)
      : H_(std::move(hessian)), star_(std::move(minimizer)), sigma_sq_(noise_var) {
    if (H_.rows() != H_.cols() || H_.rows() != star_.size()) throw ConfigError("QuadraticTestbed: shape mismatch");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H_);
    if (!(es.eigenvalues().minCoeff() > 0.0)) throw ConfigError("QuadraticTestbed: Hessian must be positive definite");
    mu_ = es.eigenvalues().minCoeff();
    L_ = es.eigenvalues().maxCoeff();
  }

  static QuadraticTestbed scalar(double lambda, double noise_var, double minimizer = 0.0) {
    return {Eigen::MatrixXd::Constant(1, 1, lambda), Eigen::VectorXd::Constant(1, minimizer), noise_var};
  }

  /// Random rotation of eigenvalues drawn log-uniformly from [mu, L].
  static QuadraticTestbed random(int p, double mu, double L, double noise_var, Rng& rng) {
    Eigen::MatrixXd g(p, p);
    std::normal_distribution<double> n01;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < p; ++j) g(i, j) = n01(rng);
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
    Eigen::VectorXd ev(p);
    std::uniform_real_distribution<double> u(std::log(mu), std::log(L));
    for (int i = 0; i < p; ++i) ev[i] = std::exp(u(rng));
    ev[0] = mu;
    if (p > 1) ev[p - 1] = L;
    Eigen::MatrixXd h = q * ev.asDiagonal() * q.transpose();
    h = 0.5 * (h + h.transpose());
    Eigen::VectorXd star(p);
    for (int i = 0; i < p; ++i) star[i] = n01(rng);
    return {h, star, noise_var};
  }

  std::size_t dim() const { return static_cast<std::size_t>(star_.size()); }
  double mu() const { return mu_; }
  double smoothness() const { return L_; }
  double noise_var() const { return sigma_sq_; }
  const Eigen::MatrixXd& hessian() const { return H_; }

  double population_loss(const Eigen::VectorXd& th) const {
    const Eigen::VectorXd d = th - star_;
    return 0.5 * d.dot(H_ * d);
  }
  Eigen::VectorXd population_gradient(const Eigen::VectorXd& th) const { return H_ * (th - star_); }
  std::optional<double> optimal_loss() const { return 0.0; }
  std::optional<Eigen::VectorXd> optimum() const { return star_; }

  LossAndGrad sample(const Eigen::VectorXd& th, std::size_t b, Rng& rng) const {
    std::normal_distribution<double> n01;
    const double s = std::sqrt(sigma_sq_ / (static_cast<double>(b) * static_cast<double>(dim())));
    Eigen::VectorXd g = population_gradient(th);
    for (Eigen::Index i = 0; i < g.size(); ++i) g[i] += s * n01(rng);
    return {population_loss(th), std::move(g)};
  }

 private:
  Eigen::MatrixXd H_;
  Eigen::VectorXd star_;
  double sigma_sq_;
  double mu_ = 0.0;
  double L_ = 0.0;
};

/// Score matching for the linear family at a single time. The population loss
/// is E||A x + b - grad log p_t(x)||^2, a quadratic in the flat parameters;
/// minibatches regress the conditional score -noise/sigma_t, whose gradient is
/// unbiased for the population gradient.
class LinearScoreProblem {
 public:
  LinearScoreProblem(const GaussianMixture& target, double t, std::optional<double> optimal = std::nullopt)
      : target_(target), t_(t), sigma_(std::sqrt(ou_marginal_params(t).sigma_sq)) {
    if (sigma_ == 0.0) throw DivisionGuardError("LinearScoreProblem: sigma_t = 0");
    theta_a_ = population_linear_minimizer(target, t);
    const auto [m, c] = marginal_moments(target, t);
    const int d = target.dim();
    M_ = Eigen::MatrixXd(d + 1, d + 1);
    M_.topLeftCorner(d, d) = c + m * m.transpose();
    M_.topRightCorner(d, 1) = m;
    M_.bottomLeftCorner(1, d) = m.transpose();
    M_(d, d) = 1.0;
    if (optimal)
      lstar_ = *optimal;
    else if (target.is_single_gaussian())
      lstar_ = 0.0;
  }

  int dim() const { return target_.dim(); }
  double time() const { return t_; }
  const LinearScoreModel& theta_a() const { return theta_a_; }
  /// E[z z^T] for z = (x, 1), x ~ p_t.
  const Eigen::MatrixXd& design_moment() const { return M_; }
  /// Smallest eigenvalue of the population Hessian 2 (I_d kron M).
  double hessian_min_eig() const {
    return 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M_).eigenvalues().minCoeff();
  }
  double hessian_max_eig() const {
    return 2.0 * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M_).eigenvalues().maxCoeff();
  }

  /// Loss in excess of the family minimum: tr(dTheta M dTheta^T).
  double excess_loss(const Eigen::VectorXd& th) const {
    const Eigen::MatrixXd dt = theta_matrix(th) - theta_matrix(theta_a_.flat());
    return (dt * M_ * dt.transpose()).trace();
  }
  double population_loss(const Eigen::VectorXd& th) const { return lstar_.value_or(0.0) + excess_loss(th); }
  Eigen::VectorXd population_gradient(const Eigen::VectorXd& th) const {
    const Eigen::MatrixXd g = 2.0 * (theta_matrix(th) - theta_matrix(theta_a_.flat())) * M_;
    return flatten(g);
  }
  std::optional<double> optimal_loss() const { return lstar_; }
  std::optional<Eigen::VectorXd> optimum() const { return theta_a_.flat(); }

  LossAndGrad sample(const Eigen::VectorXd& th, std::size_t b, Rng& rng) {
    const int d = dim();
    const auto model = LinearScoreModel::from_flat(th, d);
    std::vector<double> losses(b);
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d, d + 1);
    Eigen::VectorXd z(d + 1);
    for (std::size_t i = 0; i < b; ++i) {
      const auto dr = draw_forward(target_, t_, rng);
      const Vec r = model(dr.x) + dr.noise / sigma_;
      losses[i] = r.squaredNorm();
      z.head(d) = dr.x;
      z[d] = 1.0;
      g += 2.0 * Eigen::VectorXd(r) * z.transpose();
      if (record_) record_->push_back(dr);
    }
    return {pairwise_sum(losses) / static_cast<double>(b), flatten(g / static_cast<double>(b))};
  }

  /// Appends every draw consumed by sample() to `sink` (nullptr to stop).
  void record_draws(std::vector<ForwardDraw>* sink) { record_ = sink; }

 private:
  Eigen::MatrixXd theta_matrix(const Eigen::VectorXd& th) const {
    const int d = dim();
    if (th.size() != d * d + d) throw ContractError("LinearScoreProblem: wrong parameter length");
    Eigen::MatrixXd m(d, d + 1);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) m(i, j) = th[i * d + j];
      m(i, d) = th[d * d + i];
    }
    return m;
  }
  Eigen::VectorXd flatten(const Eigen::MatrixXd& m) const {
    const int d = dim();
    Eigen::VectorXd th(d * d + d);
    for (int i = 0; i < d; ++i) {
      for (int j = 0; j < d; ++j) th[i * d + j] = m(i, j);
      th[d * d + i] = m(i, d);
    }
    return th;
  }

  GaussianMixture target_;
  double t_;
  double sigma_;
  LinearScoreModel theta_a_;
  Eigen::MatrixXd M_;
  std::optional<double> lstar_;
  std::vector<ForwardDraw>* record_ = nullptr;
};

/// Denoising objective for the network. Shared mode draws t from the grid
/// times, uniformly or with the given weights; per-step mode pins every draw
/// to one time. The population loss is the mean denoising loss on a fixed
/// validation set.
class MlpDenoisingObjective {
 public:
  MlpDenoisingObjective(MlpArchitecture arch, GaussianMixture target, std::vector<double> times,
                        std::size_t validation_n, std::uint64_t validation_seed, int workers = 1,
                        std::vector<double> time_weights = {})
      : arch_(arch), target_(std::move(target)), times_(std::move(times)), workers_(workers) {
    if (times_.empty()) throw ConfigError("MlpDenoisingObjective: no training times");
    if (!time_weights.empty()) {
      if (time_weights.size() != times_.size())
        throw ConfigError("MlpDenoisingObjective: time weights and times differ in length");
      pick_ = std::discrete_distribution<std::size_t>(time_weights.begin(), time_weights.end());
      weighted_ = true;
    }
    Rng rng = make_stream(validation_seed, 0);
    validation_.reserve(validation_n);
    for (std::size_t i = 0; i < validation_n; ++i) validation_.push_back(draw(rng));
  }

  ForwardDraw draw(Rng& rng) const {
    std::size_t k = 0;
    if (weighted_)
      k = std::discrete_distribution<std::size_t>(pick_.param())(rng);
    else if (times_.size() > 1)
      k = std::uniform_int_distribution<std::size_t>(0, times_.size() - 1)(rng);
    return draw_forward(target_, times_[k], rng);
  }

  LossAndGrad sample(const Eigen::VectorXd& th, std::size_t b, Rng& rng) const {
    std::vector<ForwardDraw> batch(b);
    for (auto& d : batch) d = draw(rng);
    return denoising_loss(MlpScoreModel(arch_, th), batch, nullptr, workers_);
  }

  double population_loss(const Eigen::VectorXd& th) const {
    if (validation_.empty()) return std::numeric_limits<double>::quiet_NaN();
    return denoising_loss(MlpScoreModel(arch_, th), validation_, nullptr, workers_).loss;
  }

  std::optional<double> optimal_loss() const { return lstar_proxy_; }
  void set_optimal_loss_proxy(double v) { lstar_proxy_ = v; }
  const std::vector<ForwardDraw>& validation() const { return validation_; }
  const MlpArchitecture& architecture() const { return arch_; }

 private:
  MlpArchitecture arch_;
  GaussianMixture target_;
  std::vector<double> times_;
  int workers_;
  std::vector<ForwardDraw> validation_;
  std::optional<double> lstar_proxy_;
  std::discrete_distribution<std::size_t> pick_;
  bool weighted_ = false;
};

// ---------------------------------------------------------------------------
// SGD with increasing batches

struct SgdConfig {
  double eta = 0.1;
  double beta_batch = 1.0;
  std::size_t budget = 0;  // total samples n
  std::uint64_t seed = 0;
  std::optional<double> smoothness_hat;
  std::size_t eval_every = 1;  // population loss recorded every this many iterations
};

struct SgdRecord {
  std::size_t iteration = 0;
  std::size_t batch = 0;
  double loss = 0.0;
  double population_loss = std::numeric_limits<double>::quiet_NaN();
  double delta = std::numeric_limits<double>::quiet_NaN();  // population_loss - L*
  double grad_norm = 0.0;
  std::size_t cumulative = 0;
};

struct SgdTrace {
  std::vector<SgdRecord> records;
  std::string lstar_source = "none";
  std::vector<std::string> warnings;
  std::size_t samples_used() const { return records.empty() ? 0 : records.back().cumulative; }
};

struct SgdResult {
  SgdTrace trace;
  Eigen::VectorXd params;
};

class SgdDivergence : public DivergenceError {
 public:
  SgdDivergence(const std::string& what, std::size_t iteration, SgdTrace trace)
      : DivergenceError(what, iteration), trace_(std::move(trace)) {}
  const SgdTrace& trace() const { return trace_; }

 private:
  SgdTrace trace_;
};

inline std::size_t batch_size(double beta, std::size_t i) {
  return static_cast<std::size_t>(std::ceil(beta * static_cast<double>(i)));
}

inline void validate(const SgdConfig& c) {
  if (!(c.eta > 0.0) || !std::isfinite(c.eta)) throw ConfigError("sgd: eta must be > 0");
  if (!(c.beta_batch > 0.0) || !std::isfinite(c.beta_batch)) throw ConfigError("sgd: beta_batch must be > 0");
  if (c.budget < 1) throw ConfigError("sgd: sample budget n must be >= 1");
  if (c.eval_every < 1) throw ConfigError("sgd: eval_every must be >= 1");
}

/// theta_{i+1} = theta_i - eta g_i with g_i averaged over b_i = ceil(beta i)
/// fresh samples, for i = 1, 2, ... while the cumulative count fits in the
/// budget. Iteration i draws from substream i of the configured seed.
template <StochasticObjective O>
SgdResult sgd_pl_run(const SgdConfig& config, O& objective, Eigen::VectorXd init) {
  validate(config);
  SgdTrace trace;
  const auto lstar = objective.optimal_loss();
  if (lstar) trace.lstar_source = "provided";
  if (config.smoothness_hat && config.eta > 1.0 / *config.smoothness_hat)
    trace.warnings.push_back("eta = " + std::to_string(config.eta) + " exceeds 1/L_hat = " +
                             std::to_string(1.0 / *config.smoothness_hat));
  Eigen::VectorXd theta = std::move(init);
  std::size_t used = 0;
  for (std::size_t i = 1;; ++i) {
    const std::size_t b = batch_size(config.beta_batch, i);
    if (b == 0 || used + b > config.budget) break;
    Rng rng = make_stream(config.seed, i);
    auto eval = objective.sample(theta, b, rng);
    used += b;
    SgdRecord rec;
    rec.iteration = i;
    rec.batch = b;
    rec.loss = eval.loss;
    rec.grad_norm = eval.grad.norm();
    rec.cumulative = used;
    if (!std::isfinite(eval.loss) || !eval.grad.allFinite()) {
      trace.records.push_back(rec);
      throw SgdDivergence("sgd: non-finite loss at iteration " + std::to_string(i), i, std::move(trace));
    }
    theta -= config.eta * eval.grad;
    const bool last = used + batch_size(config.beta_batch, i + 1) > config.budget;
    if (i % config.eval_every == 0 || last) {
      rec.population_loss = objective.population_loss(theta);
      if (lstar) rec.delta = rec.population_loss - *lstar;
    }
    trace.records.push_back(rec);
  }
  return {std::move(trace), std::move(theta)};
}

// ---------------------------------------------------------------------------
// One-step recursion

struct RecursionCheck {
  double delta_i = 0.0;
  Estimate measured;  // E[Delta_{i+1}]
  double bound = 0.0;  // (1 - eta mu) Delta_i + L eta^2 sigma^2 / (2 b)
  bool violated = false;
};

inline RecursionCheck recursion_check(const QuadraticTestbed& q, const Eigen::VectorXd& theta, double eta,
                                      std::size_t b, std::size_t reps, Rng& rng) {
  RecursionCheck r;
  r.delta_i = q.population_loss(theta);
  std::vector<double> next(reps);
  for (auto& v : next) v = q.population_loss(theta - eta * q.sample(theta, b, rng).grad);
  r.measured = mean_se(next);
  r.bound = (1.0 - eta * q.mu()) * r.delta_i +
            q.smoothness() * eta * eta * q.noise_var() / (2.0 * static_cast<double>(b));
  r.violated = r.measured.value > r.bound + 3.0 * r.measured.se;
  return r;
}

// ---------------------------------------------------------------------------
// Assumption probes

struct ProbeOptions {
  std::size_t probe_n = 4096;   // draws used for the gradient-variance probe
  std::size_t batch = 16;       // minibatch size in the variance probe
  std::size_t random_probes = 32;
  std::size_t trajectory_steps = 200;
  double radius = 1.0;
};

struct ProbeReport {
  double pl_ratio_min = std::numeric_limits<double>::infinity();
  double smoothness_L_hat = 0.0;
  double grad_var_hat = 0.0;
  std::size_t probes_used = 0;
  std::size_t probes_skipped = 0;
};

/// PL ratio 1/2 ||grad L||^2 / (L - L*) is probed at random points around
/// `center` and along a gradient-descent trajectory; when the minimizer is
/// known the trajectory is renormalized to a fixed distance from it, which
/// makes it a power iteration toward the flattest direction. Smoothness is
/// probed on random pairs and on pairs along a power iteration of gradient
/// differences. Gradient variance is the sample variance of probe_n / batch
/// minibatch gradients at `center`.
template <DifferentiableObjective O>
ProbeReport assumption_probes(O& objective, const Eigen::VectorXd& center, const ProbeOptions& opt, Rng& rng) {
  if (opt.probe_n < 100) throw ConfigError("assumption_probes: probe_n must be >= 100");
  if (opt.batch < 1 || opt.probe_n / opt.batch < 2) throw ConfigError("assumption_probes: need >= 2 minibatches");
  const auto lstar = objective.optimal_loss();
  if (!lstar) throw ContractError("assumption_probes: objective has no optimal loss or proxy");
  const auto p = center.size();
  std::normal_distribution<double> n01;
  auto direction = [&] {
    Eigen::VectorXd v(p);
    for (Eigen::Index i = 0; i < p; ++i) v[i] = n01(rng);
    return Eigen::VectorXd(v / v.norm());
  };

  ProbeReport rep;
  auto pl_at = [&](const Eigen::VectorXd& th) {
    const double gap = objective.population_loss(th) - *lstar;
    if (!(gap > 1e-12)) {
      ++rep.probes_skipped;
      return;
    }
    const Eigen::VectorXd g = objective.population_gradient(th);
    rep.pl_ratio_min = std::min(rep.pl_ratio_min, 0.5 * g.squaredNorm() / gap);
    ++rep.probes_used;
  };

  // smoothness first; it sets the trajectory step
  for (std::size_t k = 0; k < opt.random_probes; ++k) {
    const Eigen::VectorXd a = center + opt.radius * direction();
    const Eigen::VectorXd b = center + opt.radius * direction();
    const double dist = (a - b).norm();
    if (dist > 0.0)
      rep.smoothness_L_hat = std::max(
          rep.smoothness_L_hat, (objective.population_gradient(a) - objective.population_gradient(b)).norm() / dist);
  }
  {
    const double h = 1e-3 * opt.radius;
    Eigen::VectorXd v = direction();
    const Eigen::VectorXd g0 = objective.population_gradient(center);
    for (std::size_t k = 0; k < opt.trajectory_steps; ++k) {
      const Eigen::VectorXd dg = objective.population_gradient(center + h * v) - g0;
      const double ratio = dg.norm() / h;
      rep.smoothness_L_hat = std::max(rep.smoothness_L_hat, ratio);
      if (ratio == 0.0) break;
      v = dg / dg.norm();
    }
  }

  for (std::size_t k = 0; k < opt.random_probes; ++k) pl_at(center + opt.radius * direction());
  if (rep.smoothness_L_hat > 0.0) {
    const double eta = 1.0 / rep.smoothness_L_hat;
    const auto star = objective.optimum();
    Eigen::VectorXd th = center + opt.radius * direction();
    for (std::size_t k = 0; k < opt.trajectory_steps; ++k) {
      th -= eta * objective.population_gradient(th);
      if (star) {
        const Eigen::VectorXd d = th - *star;
        if (d.norm() == 0.0) break;
        th = *star + opt.radius * d / d.norm();
      }
      pl_at(th);
    }
  }

  const std::size_t R = opt.probe_n / opt.batch;
  std::vector<Eigen::VectorXd> gs(R);
  for (auto& g : gs) g = objective.sample(center, opt.batch, rng).grad;
  Eigen::VectorXd mean = detail::pairwise_sum_vec(gs) / static_cast<double>(R);
  std::vector<double> sq(R);
  for (std::size_t r = 0; r < R; ++r) sq[r] = (gs[r] - mean).squaredNorm();
  rep.grad_var_hat = pairwise_sum(sq) / static_cast<double>(R - 1);
  return rep;
}

/// Probes for the linear family on `target` at time t, centred on `model`.
inline ProbeReport assumption_probes(const LinearScoreModel& model, const GaussianMixture& target, double t,
                                     std::size_t probe_n, Rng& rng) {
  LinearScoreProblem problem(target, t);
  if (!problem.optimal_loss()) throw ContractError("assumption_probes: mixture target needs an explicit L*");
  ProbeOptions opt;
  opt.probe_n = probe_n;
  return assumption_probes(problem, model.flat(), opt, rng);
}

}  // namespace scorelab
