#pragma once

// Gaussian-mixture data distributions with exact OU marginals, densities,
// scores and samplers.

#include "scorelab/core.hpp"
#include "scorelab/normal.hpp"
#include "scorelab/ou_process.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace scorelab {

class GaussianMixture {
 public:
  GaussianMixture(std::vector<double> weights, std::vector<Vec> means, std::vector<Mat> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    validate();
    prepare();
  }

  static GaussianMixture gaussian(const Vec& mean, const Mat& cov) { return GaussianMixture({1.0}, {mean}, {cov}); }

  /// N(0, I_d), the stationary law of the forward process.
  static GaussianMixture standard(int d) { return gaussian(Vec::Zero(d), Mat::Identity(d, d)); }

  /// One-dimensional mixture from scalar means and standard deviations.
  static GaussianMixture mixture_1d(std::vector<double> weights, const std::vector<double>& means,
                                    const std::vector<double>& stddevs) {
    if (means.size() != stddevs.size()) throw ConfigError("mixture_1d: means and stddevs differ in length");
    std::vector<Vec> m;
    std::vector<Mat> c;
    for (std::size_t i = 0; i < means.size(); ++i) {
      m.push_back(Vec::Constant(1, means[i]));
      c.push_back(Mat::Constant(1, 1, stddevs[i] * stddevs[i]));
    }
    return GaussianMixture(std::move(weights), std::move(m), std::move(c));
  }

  int dim() const { return static_cast<int>(means_.front().size()); }
  std::size_t components() const { return weights_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vec>& means() const { return means_; }
  const std::vector<Mat>& covariances() const { return covs_; }
  bool is_single_gaussian() const {
    int active = 0;
    for (double w : weights_) active += w > 0.0;
    return active == 1;
  }
  /// Index of the only component with positive weight.
  std::size_t dominant_component() const {
    for (std::size_t i = 0; i < weights_.size(); ++i)
      if (weights_[i] > 0.0) return i;
    return 0;
  }

  /// Law of x_t when x_0 follows this mixture.
  GaussianMixture marginal_at(double t) const {
    const auto p = ou_marginal_params(t);
    const int d = dim();
    std::vector<Vec> m(means_.size());
    std::vector<Mat> c(covs_.size());
    for (std::size_t i = 0; i < means_.size(); ++i) {
      m[i] = p.shrink * means_[i];
      c[i] = (p.shrink * p.shrink) * covs_[i] + p.sigma_sq * Mat::Identity(d, d);
    }
    return GaussianMixture(weights_, std::move(m), std::move(c));
  }

  double log_density(const Vec& x) const {
    check_dim(x);
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lc(weights_.size());
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      lc[i] = log_component(i, x);
      mx = std::max(mx, lc[i]);
    }
    double s = 0.0;
    for (double v : lc) s += std::exp(v - mx);
    return mx + std::log(s);
  }

  double density(const Vec& x) const { return std::exp(log_density(x)); }

  /// grad log p(x) with responsibilities formed in log space.
  Vec score(const Vec& x) const {
    check_dim(x);
    if (weights_.size() == 1) return -(prec_[0] * (x - means_[0]));
    const auto r = responsibilities(x);
    Vec s = Vec::Zero(dim());
    for (std::size_t i = 0; i < weights_.size(); ++i)
      if (r[i] > 0.0) s -= r[i] * (prec_[i] * (x - means_[i]));
    return s;
  }

  /// Jacobian of the score, i.e. the Hessian of log p.
  Mat score_jacobian(const Vec& x) const {
    check_dim(x);
    const auto r = responsibilities(x);
    const int d = dim();
    Mat h = Mat::Zero(d, d);
    Vec s = Vec::Zero(d);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (r[i] == 0.0) continue;
      const Vec g = -(prec_[i] * (x - means_[i]));
      h += r[i] * (g * g.transpose() - prec_[i]);
      s += r[i] * g;
    }
    return h - s * s.transpose();
  }

  std::vector<double> responsibilities(const Vec& x) const {
    std::vector<double> r(weights_.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      r[i] = log_component(i, x);
      mx = std::max(mx, r[i]);
    }
    double z = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : r) v /= z;
    return r;
  }

  Vec sample(Rng& rng) const {
    std::size_t i = 0;
    if (weights_.size() > 1) {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      double acc = 0.0;
      i = weights_.size() - 1;
      for (std::size_t j = 0; j < weights_.size(); ++j) {
        acc += weights_[j];
        if (u < acc && weights_[j] > 0.0) {
          i = j;
          break;
        }
      }
      while (weights_[i] == 0.0) --i;
    }
    return means_[i] + chol_[i] * standard_normal(dim(), rng);
  }

  Points sample(std::size_t n, Rng& rng) const {
    Points out(n);
    for (auto& p : out) p = sample(rng);
    return out;
  }

  /// E||x||^2 in closed form.
  double second_moment() const {
    double m = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) m += weights_[i] * (means_[i].squaredNorm() + covs_[i].trace());
    return m;
  }

  Vec mean() const {
    Vec m = Vec::Zero(dim());
    for (std::size_t i = 0; i < weights_.size(); ++i) m += weights_[i] * means_[i];
    return m;
  }

  double cdf_1d(double x) const {
    if (dim() != 1) throw DomainError("cdf_1d: target is not one-dimensional");
    double c = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i)
      c += weights_[i] * normal::cdf((x - means_[i][0]) / std::sqrt(covs_[i](0, 0)));
    return c;
  }

 private:
  void validate() const {
    if (weights_.empty()) throw ConfigError("GaussianMixture: no components");
    if (means_.size() != weights_.size() || covs_.size() != weights_.size())
      throw ConfigError("GaussianMixture: weights, means and covariances differ in length");
    const auto d = means_.front().size();
    if (d < 1 || d > kMaxDim) throw ConfigError("GaussianMixture: dimension must be 1..3");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("GaussianMixture: weights must be finite and >= 0");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("GaussianMixture: weights must sum to 1");
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (means_[i].size() != d || covs_[i].rows() != d || covs_[i].cols() != d)
        throw ConfigError("GaussianMixture: component " + std::to_string(i) + " has inconsistent dimension");
      if (!means_[i].allFinite() || !covs_[i].allFinite())
        throw ConfigError("GaussianMixture: non-finite component parameters");
      if ((covs_[i] - covs_[i].transpose()).cwiseAbs().maxCoeff() > 1e-12)
        throw ConfigError("GaussianMixture: covariance " + std::to_string(i) + " is not symmetric");
      Eigen::SelfAdjointEigenSolver<Mat> es(covs_[i], Eigen::EigenvaluesOnly);
      if (!(es.eigenvalues().minCoeff() > 0.0))
        throw ConfigError("GaussianMixture: covariance " + std::to_string(i) + " is not positive definite");
    }
  }

  void prepare() {
    const int d = dim();
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      Eigen::LLT<Mat> llt(covs_[i]);
      chol_.push_back(llt.matrixL());
      prec_.push_back(llt.solve(Mat::Identity(d, d)));
      double logdet = 0.0;
      for (int j = 0; j < d; ++j) logdet += 2.0 * std::log(chol_.back()(j, j));
      log_norm_.push_back(std::log(weights_[i]) - 0.5 * (d * std::log(2.0 * std::numbers::pi) + logdet));
    }
  }

  double log_component(std::size_t i, const Vec& x) const {
    if (weights_[i] == 0.0) return -std::numeric_limits<double>::infinity();
    const Vec r = x - means_[i];
    return log_norm_[i] - 0.5 * r.dot(prec_[i] * r);
  }

  void check_dim(const Vec& x) const {
    if (x.size() != dim()) throw DomainError("GaussianMixture: point has wrong dimension");
  }

  std::vector<double> weights_;
  std::vector<Vec> means_;
  std::vector<Mat> covs_;
  std::vector<Mat> chol_;
  std::vector<Mat> prec_;
  std::vector<double> log_norm_;
};

/// grad_x log p_t(x) for the OU marginal of `target`.
inline Vec true_score(const GaussianMixture& target, const Vec& x, double t) {
  return target.marginal_at(t).score(x);
}

/// Draws x0 ~ p0, noise ~ N(0, I) and forms x_t.
inline ForwardDraw draw_forward(const GaussianMixture& target, double t, Rng& rng) {
  Vec x0 = target.sample(rng);
  Vec noise = standard_normal(target.dim(), rng);
  return make_forward_draw(x0, t, noise);
}

struct AssumptionReport {
  double second_moment = 0.0;
  double subgaussian_proxy = 0.0;
  std::size_t samples = 0;
};

/// Closed-form E||x0||^2 and the smallest c with P(||x0|| >= s) <= 2 exp(-s^2/c^2)
/// on a probe grid of s, with tail probabilities measured from `samples` draws.
inline AssumptionReport assumption_diagnostics(const GaussianMixture& target, Rng& rng,
                                               std::size_t samples = 1'000'000, int probes = 64) {
  std::vector<double> norms(samples);
  for (auto& r : norms) r = target.sample(rng).norm();
  std::sort(norms.begin(), norms.end());
  const double smax = norms.back();
  double c = 0.0;
  for (int j = 1; j <= probes; ++j) {
    const double s = smax * j / probes;
    const auto above = static_cast<double>(norms.end() - std::lower_bound(norms.begin(), norms.end(), s));
    if (above == 0.0) continue;
    const double p = above / static_cast<double>(samples);
    c = std::max(c, s / std::sqrt(std::log(2.0 / p)));
  }
  return {target.second_moment(), c, samples};
}

}  // namespace scorelab
