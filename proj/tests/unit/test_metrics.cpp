#include "scorelab/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace scorelab;

namespace {

Points normal_1d(double m, double s, std::size_t n, Rng& rng) {
  std::normal_distribution<double> nd(m, s);
  Points out(n);
  for (auto& x : out) x = Vec::Constant(1, nd(rng));
  return out;
}

const double kShiftTv = 2.0 * normal::cdf(0.5) - 1.0;

}  // namespace

TEST(TvHistogram, IdenticalSetsGiveZero) {
  Rng rng(1);
  const auto a = normal_1d(0.0, 1.0, 5000, rng);
  const auto e = tv_histogram(a, a);
  EXPECT_EQ(e.value, 0.0);
  EXPECT_EQ(*e.value_half, 0.0);
  EXPECT_EQ(*e.value_double, 0.0);
}

TEST(TvHistogram, DisjointSupports) {
  Rng rng(2);
  const auto a = normal_1d(0.0, 1.0, 5000, rng);
  const auto b = normal_1d(100.0, 1.0, 5000, rng);
  EXPECT_NEAR(tv_histogram(a, b).value, 1.0, 1e-3);
}

TEST(TvHistogram, UnitShiftMatchesClosedForm) {
  Rng rng(3);
  const auto a = normal_1d(0.0, 1.0, 1'000'000, rng);
  const auto b = normal_1d(1.0, 1.0, 1'000'000, rng);
  const auto e = tv_histogram(a, b, 200);
  EXPECT_NEAR(e.value, kShiftTv, 0.01);
  EXPECT_EQ(e.bins, 200);
  EXPECT_EQ(e.method, TVMethod::histogram);
}

TEST(TvHistogram, SymmetricAndBounded) {
  Rng rng(4);
  for (int d = 1; d <= 3; ++d) {
    Points a(4000), b(3000);
    for (auto& x : a) x = standard_normal(d, rng);
    for (auto& x : b) x = Vec(standard_normal(d, rng).array() * 1.5 + 0.3);
    const double ab = tv_histogram(a, b).value, ba = tv_histogram(b, a).value;
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(TvHistogram, Errors) {
  Rng rng(5);
  const auto a = normal_1d(0.0, 1.0, 2000, rng);
  EXPECT_THROW(tv_histogram(a, Points{}), ContractError);
  EXPECT_THROW(tv_histogram(Points{}, a), ContractError);
  EXPECT_THROW(tv_histogram(a, normal_1d(0.0, 1.0, 999, rng)), ContractError);
  Points two(2000, Vec::Zero(2));
  EXPECT_THROW(tv_histogram(a, two), ContractError);
}

TEST(TvHistogram, ConvergesToQuadrature) {
  Rng rng(6);
  const auto a = normal_1d(0.0, 1.0, 10'000'000, rng);
  const auto wide = GaussianMixture::mixture_1d({1.0}, {0.0}, {2.0});
  const double q = tv_quadrature(GaussianMixture::standard(1), wide).value;
  EXPECT_NEAR(tv_histogram(a, wide).value, q, 0.005);
}

TEST(TvQuadrature, IdenticalMixtures) {
  const auto g1 = GaussianMixture::mixture_1d({0.3, 0.7}, {-1.0, 2.0}, {0.5, 0.8});
  EXPECT_NEAR(tv_quadrature(g1, g1).value, 0.0, 1e-9);
  const auto g2 = GaussianMixture::gaussian(Vec::Zero(2), (Mat(2, 2) << 1.0, 0.3, 0.3, 0.5).finished());
  EXPECT_NEAR(tv_quadrature(g2, g2).value, 0.0, 1e-9);
}

TEST(TvQuadrature, TwoDimensionalShift) {
  // equal covariances: TV = 2 Phi(delta / 2) - 1 with delta the Mahalanobis shift
  const Mat c = (Mat(2, 2) << 1.0, 0.4, 0.4, 0.8).finished();
  const Vec shift = (Vec(2) << 0.6, -0.3).finished();
  const auto a = GaussianMixture::gaussian(Vec::Zero(2), c);
  const auto b = GaussianMixture::gaussian(shift, c);
  const double delta = std::sqrt(shift.dot(c.llt().solve(shift)));
  EXPECT_NEAR(tv_quadrature(a, b).value, 2.0 * normal::cdf(0.5 * delta) - 1.0, 1e-6);
}

TEST(TvQuadrature, CoverageError) {
  auto f = [](double x) { return normal::pdf(x); };
  EXPECT_THROW(tv_quadrature_1d(f, f, -2.0, 2.0), CoverageError);
  EXPECT_NO_THROW(tv_quadrature_1d(f, f, -6.0, 6.0));
}

TEST(TvGaussian, AgreesWithQuadrature) {
  const double cases[][4] = {{0, 1, 1, 1}, {0, 1, 0, 4}, {0.3, 0.2, -0.5, 1.7}, {2, 0.01, 2.1, 0.011}, {0, 1, 0, 1}};
  for (const auto& c : cases) {
    const auto ga = GaussianMixture::mixture_1d({1.0}, {c[0]}, {std::sqrt(c[1])});
    const auto gb = GaussianMixture::mixture_1d({1.0}, {c[2]}, {std::sqrt(c[3])});
    const double exact = tv_gaussian_1d(c[0], c[1], c[2], c[3]);
    EXPECT_NEAR(exact, tv_quadrature(ga, gb).value, 1e-7);
    EXPECT_NEAR(exact, tv_gaussian_1d(c[2], c[3], c[0], c[1]), 1e-14);
  }
  EXPECT_NEAR(tv_gaussian_1d(0.0, 1.0, 1.0, 1.0), kShiftTv, 1e-15);
  EXPECT_THROW(tv_gaussian_1d(0.0, 0.0, 1.0, 1.0), DomainError);
}

TEST(TvGaussian, TinyShiftKeepsRelativeAccuracy) {
  // TV of a small mean shift h is h / sqrt(2 pi) to first order
  const double h = 1e-7;
  EXPECT_NEAR(tv_gaussian_1d(0.0, 1.0, h, 1.0) / (h * normal::pdf(0.0)), 1.0, 1e-6);
}

TEST(TvFittedGaussian, WithinStandardErrors) {
  Rng rng(7);
  const auto s = normal_1d(0.2, std::sqrt(1.3), 20'000, rng);
  const auto e = tv_fitted_gaussian(s, 0.0, 1.0);
  EXPECT_LT(std::abs(e.value - tv_gaussian_1d(0.2, 1.3, 0.0, 1.0)), 4.0 * e.se);
  EXPECT_EQ(e.method, TVMethod::closed_form_gaussian);
  const auto b = normal_1d(0.0, 1.0, 20'000, rng);
  const auto p = tv_fitted_gaussian(s, b);
  EXPECT_LT(std::abs(p.value - tv_gaussian_1d(0.2, 1.3, 0.0, 1.0)), 4.0 * p.se);
}

TEST(TvEarlyStopLeg, ShrinksWithStopTime) {
  // TV(p0, p_t0) against sqrt(t0) log(1/t0) with the constant fitted at 0.1
  const auto p0 = GaussianMixture::mixture_1d({0.5, 0.5}, {-1.0, 1.0}, {0.3, 0.3});
  const std::vector<double> t0s{0.1, 0.03, 0.01, 0.003, 0.001};
  auto env = [](double t) { return std::sqrt(t) * std::log(1.0 / t); };
  double prev = 1.0, C = 0.0;
  for (double t0 : t0s) {
    const double tv = tv_quadrature(p0, p0.marginal_at(t0)).value;
    if (t0 == 0.1) C = tv / env(t0);
    EXPECT_LT(tv, prev);
    EXPECT_LE(tv, C * env(t0) + 1e-6);
    prev = tv;
  }
  EXPECT_NEAR(tv_quadrature(GaussianMixture::standard(1), GaussianMixture::standard(1).marginal_at(0.01)).value, 0.0,
              1e-9);
}

TEST(EnergyDistance, FastPathMatchesDirect) {
  Rng rng(8);
  const auto a = normal_1d(0.0, 1.0, 300, rng);
  const auto b = normal_1d(0.4, 1.2, 200, rng);
  EXPECT_NEAR(energy_distance(a, b), detail::energy_direct(a, b), 1e-10);
  EXPECT_NEAR(energy_distance(a, a), 0.0, 1e-12);
}

TEST(EnergyDistance, PushforwardConsistency1d) {
  const auto g = GaussianMixture::mixture_1d({0.3, 0.7}, {-2.0, 1.0}, {0.4, 0.7});
  Rng rng(9);
  const double t = 0.4;
  Points pushed, direct;
  for (int i = 0; i < 10'000; ++i) pushed.push_back(draw_forward(g, t, rng).x);
  direct = g.marginal_at(t).sample(10'000, rng);
  EXPECT_GT(energy_test(pushed, direct, 199, rng).p_value, 0.01);
  // negative control: wrong time
  const auto wrong = g.marginal_at(0.6).sample(10'000, rng);
  EXPECT_LE(energy_test(pushed, wrong, 199, rng).p_value, 0.01);
}

TEST(EnergyDistance, PushforwardConsistency2d) {
  const auto g = GaussianMixture({0.5, 0.5}, {(Vec(2) << 1.0, 0.0).finished(), (Vec(2) << -1.0, 1.0).finished()},
                                 {Mat::Identity(2, 2) * 0.2, Mat::Identity(2, 2) * 0.4});
  Rng rng(10);
  Points pushed;
  for (int i = 0; i < 1500; ++i) pushed.push_back(draw_forward(g, 0.3, rng).x);
  const auto direct = g.marginal_at(0.3).sample(1500, rng);
  EXPECT_GT(energy_test(pushed, direct, 49, rng).p_value, 0.01);
}

TEST(GirsanovKl, TelemetryCases) {
  const auto g = GaussianMixture::standard(1);
  const auto grid = make_time_grid(1.5, 50, 0.01);
  ReverseRunSpec spec;
  spec.grid = grid;
  spec.n_samples = 500;
  spec.seed = 3;
  const OracleScore oracle(g);
  const auto same = generate(spec, oracle, &g, &oracle);
  const auto k0 = girsanov_kl(same.telemetry, grid);
  EXPECT_EQ(k0.kl.value, 0.0);
  EXPECT_EQ(k0.tv_pinsker, 0.0);

  const OffsetScore<OracleScore> s1{oracle, Vec::Constant(1, 0.2)}, s2{oracle, Vec::Constant(1, 0.4)};
  const auto r1 = girsanov_kl(generate(spec, s1, &g, &oracle).telemetry, grid);
  const auto r2 = girsanov_kl(generate(spec, s2, &g, &oracle).telemetry, grid);
  EXPECT_NEAR(r1.kl.value, 0.04 * (1.5 - 0.01), 1e-12);
  EXPECT_NEAR(r2.kl.value / r1.kl.value, 4.0, 1e-9);

  EXPECT_THROW(girsanov_kl(generate(spec, s1, &g).telemetry, grid), ContractError);
  EXPECT_THROW(girsanov_kl(same.telemetry, make_time_grid(1.5, 49, 0.01)), ContractError);
}

TEST(GirsanovKl, PathLikelihoodRatioAgrees) {
  const auto g = GaussianMixture::standard(1);
  const auto grid = make_time_grid(1.0, 64, 0.001);
  const OracleScore oracle(g);
  const OffsetScore<OracleScore> shifted{oracle, Vec::Constant(1, 0.5)};
  const auto k = em_path_kl(grid, shifted, oracle, g, 20'000, 17);
  EXPECT_LT(std::abs(k.kl.value - 0.25 * (1.0 - 0.001)), 4.0 * k.kl.se);
}

TEST(TvLegs, ClosedFormOracleHasNoScoreLeg) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {0.8}, {0.4});
  const auto grid = make_time_grid(4.0, 64, 0.01);
  auto oracle = [&](double t) { return population_linear_minimizer(g, t); };
  const auto l = tv_legs_closed_form(g, oracle, grid);
  EXPECT_EQ(l.leg_score.value, 0.0);
  EXPECT_GT(l.leg_init.value, 0.0);
  EXPECT_LT(l.leg_init.value, 0.05);
  EXPECT_GT(l.leg_discretization.value, l.reference_residual);
  EXPECT_TRUE(l.triangle_ok);
}

TEST(TvLegs, ClosedFormTriangleWithPerturbedScore) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {-0.5}, {0.7});
  for (double c : {0.05, 0.2, 1.0}) {
    const auto grid = make_time_grid(3.0, 100, 0.02);
    auto learned = [&](double t) {
      auto m = population_linear_minimizer(g, t);
      m.b[0] += c;
      m.A(0, 0) *= 1.0 + c;
      return m;
    };
    const auto l = tv_legs_closed_form(g, learned, grid);
    EXPECT_TRUE(l.triangle_ok) << c;
    for (const auto* e : {&l.leg_discretization, &l.leg_score, &l.leg_init, &l.total_direct}) {
      EXPECT_GE(e->value, 0.0);
      EXPECT_LE(e->value, 1.0);
    }
  }
}

TEST(TvLegs, InitLegDecaysWithHorizon) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {1.0}, {0.5});
  auto oracle = [&](double t) { return population_linear_minimizer(g, t); };
  const double dt = 1.0 / 32.0;
  std::vector<double> Ts{2.0, 10.0}, legs;
  for (double T : Ts) legs.push_back(tv_legs_closed_form(g, oracle, make_time_grid(T, int(T / dt), 0.01)).leg_init.value);
  EXPECT_LE((std::log(legs[1]) - std::log(legs[0])) / (Ts[1] - Ts[0]), -0.8);
}

TEST(TvLegs, HistogramModeWithOracle) {
  const auto g = GaussianMixture::mixture_1d({0.5, 0.5}, {-1.0, 1.0}, {0.4, 0.4});
  const auto grid = make_time_grid(3.0, 32, 0.01);
  const OracleScore oracle(g, grid.times());
  const auto l = tv_legs(g, oracle, grid, 4000, 12);
  EXPECT_EQ(l.leg_score.value, 0.0);
  ASSERT_TRUE(l.girsanov.has_value());
  EXPECT_EQ(l.girsanov->kl.value, 0.0);
  EXPECT_TRUE(l.triangle_ok);
  ASSERT_TRUE(l.direct_analytic.has_value());
}

TEST(Sampler, OracleOutputMatchesAnalyticMarginal) {
  const auto g = GaussianMixture::mixture_1d({0.4, 0.6}, {-1.5, 1.0}, {0.5, 0.4});
  ReverseRunSpec spec;
  spec.grid = make_time_grid(5.0, 256, 0.01);
  spec.n_samples = 100'000;
  spec.seed = 77;
  const OracleScore oracle(g, spec.grid.times());
  const auto res = generate(spec, oracle, &g);
  EXPECT_LE(tv_histogram(res.samples, g.marginal_at(0.01)).value, 0.05);
}
