#pragma once

// Forward Ornstein-Uhlenbeck dynamics dx = -x dt + sqrt(2) dB, its closed-form
// marginals, and the discrete time grid shared by training and sampling.

#include "scorelab/core.hpp"

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace scorelab {

/// Coefficients of x_t | x_0 ~ N(shrink * x_0, sigma_sq * I).
struct OUMarginalParams {
  double shrink = 1.0;    // e^{-t}
  double sigma_sq = 0.0;  // 1 - e^{-2t}

  double sigma() const { return std::sqrt(sigma_sq); }
};

inline OUMarginalParams ou_marginal_params(double t) {
  if (!std::isfinite(t) || t < 0.0) throw DomainError("ou_marginal_params: t must be finite and >= 0");
  return {std::exp(-t), -std::expm1(-2.0 * t)};
}

/// e^{-t} x0 + sqrt(1 - e^{-2t}) noise.
inline Vec forward_sample(const Vec& x0, double t, const Vec& noise) {
  if (x0.size() != noise.size()) throw DomainError("forward_sample: dimension mismatch between x0 and noise");
  const auto p = ou_marginal_params(t);
  return p.shrink * x0 + p.sigma() * noise;
}

/// One forward-process draw with its provenance, as used by denoising
/// objectives and truncation events.
struct ForwardDraw {
  Vec x0;
  Vec noise;
  double t = 0.0;
  Vec x;  // forward_sample(x0, t, noise)
};

inline ForwardDraw make_forward_draw(const Vec& x0, double t, const Vec& noise) {
  return {x0, noise, t, forward_sample(x0, t, noise)};
}

enum class GridSpacing { uniform, geometric_near_t0 };

inline std::string_view to_string(GridSpacing s) {
  return s == GridSpacing::uniform ? "uniform" : "geometric-near-t0";
}

inline GridSpacing parse_grid_spacing(std::string_view s) {
  if (s == "uniform") return GridSpacing::uniform;
  if (s == "geometric-near-t0" || s == "geometric") return GridSpacing::geometric_near_t0;
  throw ConfigError("unknown grid spacing '" + std::string(s) + "'");
}

/// Per-step DDPM coefficients for the reverse move t_{k+1} -> t_k.
struct DdpmStep {
  double alpha = 1.0;  // e^{-2 delta_k}
  double beta = 0.0;   // 1 - alpha
};

/// Ascending times t0 = t_0 < ... < t_K = T - kappa_stop. The DDPM schedule is
/// tied to the OU clock through alpha_bar(t) = e^{-2t}, so the product of the
/// per-step alphas between two grid points equals the ratio of alpha_bars.
class TimeGrid {
 public:
  TimeGrid(double horizon, double t0, double kappa_stop, GridSpacing spacing, std::vector<double> times)
      : horizon_(horizon), t0_(t0), kappa_stop_(kappa_stop), spacing_(spacing), times_(std::move(times)) {
    deltas_.resize(times_.size() - 1);
    steps_.resize(deltas_.size());
    for (std::size_t k = 0; k < deltas_.size(); ++k) {
      deltas_[k] = times_[k + 1] - times_[k];
      const double alpha = std::exp(-2.0 * deltas_[k]);
      steps_[k] = {alpha, -std::expm1(-2.0 * deltas_[k])};
    }
  }

  double horizon() const { return horizon_; }
  int steps() const { return static_cast<int>(deltas_.size()); }
  double t0() const { return t0_; }
  double kappa_stop() const { return kappa_stop_; }
  double t_end() const { return times_.back(); }
  GridSpacing spacing() const { return spacing_; }
  const std::vector<double>& times() const { return times_; }
  const std::vector<double>& deltas() const { return deltas_; }

  /// alpha_bar at grid time t_k, i.e. e^{-2 t_k}.
  double alpha_bar(std::size_t k) const { return std::exp(-2.0 * times_.at(k)); }
  /// Coefficients of the reverse step from t_{k+1} down to t_k.
  const DdpmStep& step(std::size_t k) const { return steps_.at(k); }

 private:
  double horizon_;
  double t0_;
  double kappa_stop_;
  GridSpacing spacing_;
  std::vector<double> times_;
  std::vector<double> deltas_;
  std::vector<DdpmStep> steps_;
};

/// Builds a K-step grid on [t0, T - kappa_stop]. Geometric spacing uses
/// t_k = t0 * q^k, so step sizes grow by the constant ratio q away from t0.
inline TimeGrid make_time_grid(double horizon, int steps, double t0, double kappa_stop = 0.0,
                               GridSpacing spacing = GridSpacing::uniform) {
  if (!(std::isfinite(horizon) && std::isfinite(t0) && std::isfinite(kappa_stop)))
    throw ConfigError("make_time_grid: non-finite argument");
  if (steps < 1) throw ConfigError("make_time_grid: K must be >= 1");
  if (kappa_stop < 0.0) throw ConfigError("make_time_grid: kappa_stop must be >= 0");
  const double t_end = horizon - kappa_stop;
  if (!(t0 > 0.0 && t0 < t_end)) throw ConfigError("make_time_grid: need 0 < t0 < T - kappa_stop");

  std::vector<double> times(static_cast<std::size_t>(steps) + 1);
  times.front() = t0;
  times.back() = t_end;
  if (spacing == GridSpacing::uniform) {
    const double h = (t_end - t0) / steps;
    for (int k = 1; k < steps; ++k) times[k] = t0 + k * h;
  } else {
    const double log_ratio = std::log(t_end / t0) / steps;
    for (int k = 1; k < steps; ++k) times[k] = t0 * std::exp(k * log_ratio);
  }
  return TimeGrid(horizon, t0, kappa_stop, spacing, std::move(times));
}

}  // namespace scorelab
