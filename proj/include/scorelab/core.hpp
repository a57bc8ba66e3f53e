#pragma once

// Shared vocabulary: small fixed-capacity vectors, the error hierarchy,
// seeded RNG streams, deterministic reductions and a handful of statistics
// helpers used by every estimator in the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace scorelab {

inline constexpr int kMaxDim = 3;

/// Point or vector in R^d with d <= 3; never heap-allocates.
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
/// d x d matrix with d <= 3.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;
using Points = std::vector<Vec>;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or object configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an interface contract (misaligned inputs, missing provenance).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite parameters or data.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Division by a vanishing noise level (sigma_t^2 = 0).
class DivisionGuardError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Singular or rank-deficient least-squares design.
class RankError : public Error {
 public:
  using Error::Error;
};

/// Quadrature box does not hold enough probability mass.
class CoverageError : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure produced a non-finite state; index() is the step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t index) : Error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

// ---------------------------------------------------------------------------
// Random streams

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of substream `stream` under `master`: two rounds of splitmix64 so that
/// neighbouring stream indices give unrelated generators.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(master, a), b);
}

inline Rng make_stream(std::uint64_t master, std::uint64_t stream) {
  return Rng{derive_seed(master, stream)};
}

inline Vec standard_normal(int d, Rng& rng) {
  std::normal_distribution<double> n01;
  Vec z(d);
  for (int j = 0; j < d; ++j) z[j] = n01(rng);
  return z;
}

inline void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string(what) + ": non-finite entry");
}

// ---------------------------------------------------------------------------
// Deterministic reductions

/// Pairwise (cascade) summation; result independent of thread layout.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 16) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = v.size() / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

/// Runs f(i) for i in [0, n) on up to `workers` threads. Callers write to
/// slot i only, so results do not depend on the worker count.
template <class F>
void parallel_for(std::size_t n, int workers, F&& f) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  std::vector<std::jthread> pool;
  pool.reserve(w);
  std::vector<std::exception_ptr> errors(w);
  for (std::size_t id = 0; id < w; ++id) {
    pool.emplace_back([&, id] {
      try {
        for (std::size_t i = id; i < n; i += w) f(i);
      } catch (...) {
        errors[id] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Statistics

/// Point estimate with its Monte-Carlo standard error.
struct Estimate {
  double value = 0.0;
  double se = 0.0;
};

inline Estimate mean_se(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean_se: empty sample");
  const double n = static_cast<double>(v.size());
  const double mean = pairwise_sum(v) / n;
  if (v.size() == 1) return {mean, 0.0};
  std::vector<double> sq(v.size());
  std::transform(v.begin(), v.end(), sq.begin(), [mean](double x) { return (x - mean) * (x - mean); });
  const double var = pairwise_sum(sq) / (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) throw ContractError("sample_variance: need at least two values");
  const double n = static_cast<double>(v.size());
  const double mean = pairwise_sum(v) / n;
  std::vector<double> sq(v.size());
  std::transform(v.begin(), v.end(), sq.begin(), [mean](double x) { return (x - mean) * (x - mean); });
  return pairwise_sum(sq) / (n - 1.0);
}

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw ContractError("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] * (1.0 - frac) + v[hi] * frac;
}

inline double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// Ordinary least-squares line through (x, y).
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("fit_line: need >= 2 aligned points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("fit_line: degenerate abscissae");
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

/// Slope of log(y) against log(x).
inline LineFit fit_loglog(std::span<const double> x, std::span<const double> y) {
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("fit_loglog: values must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  return fit_line(lx, ly);
}

}  // namespace scorelab
