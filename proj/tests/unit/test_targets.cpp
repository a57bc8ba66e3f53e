#include "scorelab/targets.hpp"

#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <numbers>

using namespace scorelab;
using boost::math::quadrature::gauss_kronrod;

namespace {

GaussianMixture bimodal() { return GaussianMixture::mixture_1d({0.5, 0.5}, {-2.0, 2.0}, {1.0, 1.0}); }

GaussianMixture skewed() { return GaussianMixture::mixture_1d({0.3, 0.7}, {-1.5, 1.0}, {0.4, 0.8}); }

double gauss_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

}  // namespace

TEST(Validation, RejectsBadTargets) {
  EXPECT_THROW(GaussianMixture::mixture_1d({0.5, 0.6}, {0, 1}, {1, 1}), ConfigError);
  EXPECT_THROW(GaussianMixture::mixture_1d({1.0}, {0}, {0.0}), ConfigError);
  Mat asym(2, 2);
  asym << 1.0, 0.1, 0.0, 1.0;
  EXPECT_THROW(GaussianMixture::gaussian(Vec::Zero(2), asym), ConfigError);
  Mat indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(GaussianMixture::gaussian(Vec::Zero(2), indefinite), ConfigError);
  EXPECT_THROW(GaussianMixture({}, {}, {}), ConfigError);
}

TEST(Sample, StandardNormalMean) {
  Rng rng(1);
  const int d = 3, n = 100000;
  const auto g = GaussianMixture::standard(d);
  Vec s = Vec::Zero(d);
  for (int i = 0; i < n; ++i) s += g.sample(rng);
  s /= n;
  for (int j = 0; j < d; ++j) EXPECT_LT(std::abs(s[j]), 4.0 / std::sqrt(n) * std::sqrt(d));
}

TEST(Sample, ZeroWeightComponentNeverDrawn) {
  Rng rng(2);
  const auto g = GaussianMixture::mixture_1d({1.0, 0.0}, {0.0, 100.0}, {1.0, 1.0});
  for (int i = 0; i < 20000; ++i) EXPECT_LT(g.sample(rng)[0], 50.0);
  EXPECT_TRUE(g.is_single_gaussian());
}

TEST(Sample, BimodalSecondMoment) {
  Rng rng(3);
  const auto g = bimodal();
  std::vector<double> sq(100000);
  for (auto& v : sq) v = g.sample(rng).squaredNorm();
  const auto m = mean_se(sq);
  EXPECT_NEAR(m.value, 5.0, 3.0 * m.se);
}

TEST(Marginal, StationaryTargetIsFixed) {
  const auto g = GaussianMixture::standard(2);
  const auto m = g.marginal_at(0.7);
  EXPECT_NEAR((m.means()[0]).norm(), 0.0, 1e-15);
  EXPECT_NEAR((m.covariances()[0] - Mat::Identity(2, 2)).norm(), 0.0, 1e-15);
}

TEST(Marginal, OneDimensionalGaussianAtLn2) {
  const double mu = 1.7, s0 = 0.6;
  const auto m = GaussianMixture::mixture_1d({1.0}, {mu}, {s0}).marginal_at(std::log(2.0));
  EXPECT_NEAR(m.means()[0][0], mu / 2.0, 1e-15);
  EXPECT_NEAR(m.covariances()[0](0, 0), s0 * s0 / 4.0 + 0.75, 1e-15);
}

TEST(Marginal, DensityMatchesConvolutionQuadrature) {
  const auto g = skewed();
  const double t = 1.0, a = std::exp(-t), v = 1.0 - std::exp(-2.0 * t);
  const auto pt = g.marginal_at(t);
  for (double x : {-3.0, -1.2, 0.0, 0.4, 2.5}) {
    auto integrand = [&](double y) {
      double p0 = 0.0;
      for (std::size_t i = 0; i < 2; ++i)
        p0 += g.weights()[i] * gauss_pdf(y, g.means()[i][0], g.covariances()[i](0, 0));
      return p0 * gauss_pdf(x, a * y, v);
    };
    const double q = gauss_kronrod<double, 61>::integrate(integrand, -15.0, 15.0, 15, 1e-13);
    EXPECT_NEAR(pt.density(Vec::Constant(1, x)), q, 1e-6) << x;
  }
}

TEST(Score, StandardNormalIsMinusX) {
  Vec x(2);
  x << 0.3, -4.0;
  EXPECT_NEAR((true_score(GaussianMixture::standard(2), x, 0.4) + x).norm(), 0.0, 1e-14);
}

TEST(Score, GaussianConjugacy) {
  const double mu = -0.8, s0 = 1.9, t = 0.35, x = 2.2;
  const double c = std::exp(-2 * t) * s0 * s0 + 1 - std::exp(-2 * t);
  const auto g = GaussianMixture::mixture_1d({1.0}, {mu}, {s0});
  EXPECT_NEAR(true_score(g, Vec::Constant(1, x), t)[0], -(x - std::exp(-t) * mu) / c, 1e-14);
}

TEST(Score, MatchesFiniteDifferenceOfLogDensity) {
  const auto pt = bimodal().marginal_at(0.2);
  const double h = 1e-5;
  for (double x = -6.0; x <= 6.0; x += 0.37) {
    const double fd =
        (pt.log_density(Vec::Constant(1, x + h)) - pt.log_density(Vec::Constant(1, x - h))) / (2.0 * h);
    const double s = pt.score(Vec::Constant(1, x))[0];
    EXPECT_NEAR(s, fd, 1e-6 * std::max(1.0, std::abs(s))) << x;
  }
}

TEST(Score, FiniteFarInTheTails) {
  const auto pt = bimodal().marginal_at(0.01);
  const Vec s = pt.score(Vec::Constant(1, 1e4));
  EXPECT_TRUE(s.allFinite());
  EXPECT_NEAR(s[0], -(1e4 - 2.0 * std::exp(-0.01)) / pt.covariances()[1](0, 0), 1e-6);
}

TEST(Score, JacobianMatchesFiniteDifference) {
  std::vector<Vec> means{Vec::Zero(2), Vec::Constant(2, 1.5)};
  Mat c0(2, 2), c1(2, 2);
  c0 << 1.0, 0.3, 0.3, 0.5;
  c1 << 0.4, -0.1, -0.1, 0.9;
  const GaussianMixture g({0.4, 0.6}, means, {c0, c1});
  Vec x(2);
  x << 0.7, 0.2;
  const Mat J = g.score_jacobian(x);
  const double h = 1e-6;
  for (int j = 0; j < 2; ++j) {
    Vec e = Vec::Zero(2);
    e[j] = h;
    const Vec col = (g.score(x + e) - g.score(x - e)) / (2 * h);
    EXPECT_NEAR((J.col(j) - col).norm(), 0.0, 1e-7);
  }
}

TEST(Score, ZeroMeanUnderMarginal) {
  Rng rng(5);
  const auto pt = skewed().marginal_at(0.3);
  std::vector<double> s(100000);
  for (auto& v : s) v = pt.score(pt.sample(rng))[0];
  const auto m = mean_se(s);
  EXPECT_NEAR(m.value, 0.0, 4.0 * m.se);
}

TEST(Score, SteinIdentityByQuadrature) {
  const auto pt = skewed().marginal_at(0.15);
  auto lhs = [&](double x) {
    const Vec v = Vec::Constant(1, x);
    const double s = pt.score(v)[0];
    return s * s * pt.density(v);
  };
  auto rhs = [&](double x) {
    const Vec v = Vec::Constant(1, x);
    return -pt.score_jacobian(v)(0, 0) * pt.density(v);
  };
  const double a = gauss_kronrod<double, 61>::integrate(lhs, -12.0, 12.0, 15, 1e-12);
  const double b = gauss_kronrod<double, 61>::integrate(rhs, -12.0, 12.0, 15, 1e-12);
  EXPECT_NEAR(a, b, 1e-4);
}

TEST(Diagnostics, SecondMoments) {
  Rng rng(6);
  EXPECT_DOUBLE_EQ(GaussianMixture::standard(3).second_moment(), 3.0);
  EXPECT_DOUBLE_EQ(bimodal().second_moment(), 5.0);
  const auto rep = assumption_diagnostics(GaussianMixture::standard(1), rng, 200000);
  EXPECT_DOUBLE_EQ(rep.second_moment, 1.0);
  EXPECT_GT(rep.subgaussian_proxy, 0.5);
  EXPECT_LT(rep.subgaussian_proxy, 2.0);
}

TEST(Diagnostics, GaussianTailAtThreeSatisfiesProxyTwo) {
  // P(|X| >= 3) from the normal CDF against the sub-Gaussian envelope with c = 2.
  const double tail = std::erfc(3.0 / std::numbers::sqrt2);
  EXPECT_NEAR(tail, 0.0027, 1e-4);
  EXPECT_LE(tail, 2.0 * std::exp(-9.0 / 4.0));
}
