#pragma once

// Standard normal density, CDF and tail quantities. Tails beyond z = 8 are
// evaluated through Laplace's continued fraction for the Mills ratio so that
// hazard and log-tail values stay accurate far past the point where
// 1 - Phi(z) underflows or cancels.

#include <cmath>
#include <numbers>

namespace scorelab::normal {

inline constexpr double kTailSwitch = 8.0;

inline double pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

inline double log_pdf(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi); }

inline double cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// 1 - Phi(z) without cancellation.
inline double upper_tail(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

/// Mills ratio R(z) = (1 - Phi(z)) / phi(z) for z > 0 via modified Lentz
/// evaluation of R(z) = 1/(z + 1/(z + 2/(z + 3/(z + ...)))).
inline double mills_ratio_cf(double z) {
  constexpr double tiny = 1e-300;
  double f = z;
  double c = z;
  double d = 0.0;
  for (int k = 1; k < 500; ++k) {
    const double a = static_cast<double>(k);
    d = z + a * d;
    if (std::abs(d) < tiny) d = tiny;
    c = z + a / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return 1.0 / f;
}

/// log(1 - Phi(z)).
inline double log_upper_tail(double z) {
  if (z > kTailSwitch) return log_pdf(z) + std::log(mills_ratio_cf(z));
  return std::log(upper_tail(z));
}

/// Gaussian hazard phi(z) / (1 - Phi(z)), i.e. the inverse Mills ratio.
inline double hazard(double z) {
  if (z > kTailSwitch) return 1.0 / mills_ratio_cf(z);
  return pdf(z) / upper_tail(z);
}

}  // namespace scorelab::normal
