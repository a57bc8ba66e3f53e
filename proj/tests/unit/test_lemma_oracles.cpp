#include "scorelab/lemma_oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace scorelab;

// Reference values in 50-digit arithmetic; the far tails use erfc directly.
TEST(TruncatedMoment, FrozenReferenceValues) {
  const double cases[][4] = {{0, 1, 1, 2.5251352761609812091},
                             {3, 2, 5, 41.227447976639072505},
                             {-3, 0.5, 2, 13.475607144489471073},
                             {0, 1, 0.5, 1.5705388851840322404},
                             {0, 2, 0, 4.0},
                             {0, 1, 12, 145.98657010305141196},
                             {1, 0.5, 10, 101.49876534263925271},
                             {0, 1, 40, 1601.9987538882905489}};
  for (const auto& c : cases) {
    EXPECT_NEAR(truncated_second_moment(c[0], c[1], c[2]) / c[3], 1.0, 1e-12) << c[0] << " " << c[1] << " " << c[2];
    EXPECT_NEAR(truncated_second_moment_quadrature(c[0], c[1], c[2]) / c[3], 1.0, 1e-9);
  }
}

TEST(TruncatedMoment, NoTruncation) {
  EXPECT_DOUBLE_EQ(truncated_second_moment(1.5, 0.7, 0.0), 1.5 * 1.5 + 0.7 * 0.7);
}

TEST(TruncatedMoment, GridAgainstQuadrature) {
  const auto rows = truncated_moment_check();
  ASSERT_EQ(rows.size(), 45u);
  double worst = 0.0;
  for (const auto& r : rows) {
    EXPECT_TRUE(r.pass) << r.point;
    worst = std::max(worst, r.rel_err);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(TruncatedMoment, FarTailStaysFinite) {
  // 1 - Phi(40) underflows; the hazard form does not
  const double v = truncated_second_moment(0.0, 1.0, 40.0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v / (1.0 + 40.0 * normal::hazard(40.0)), 1.0, 1e-15);
  EXPECT_NEAR(v / truncated_second_moment_quadrature(0.0, 1.0, 40.0), 1.0, 1e-9);
}

TEST(TruncatedMoment, Errors) {
  EXPECT_THROW(truncated_second_moment(0.0, 1.0, -0.1), DomainError);
  EXPECT_THROW(truncated_second_moment(0.0, 0.0, 1.0), DomainError);
}

TEST(MillsRatio, Examples) {
  const std::vector<double> ks{1.0, 5.0, 50.0};
  const auto r = mills_ratio_bound_check(ks);
  EXPECT_NEAR(r[0].oracle, 1.5251352761609812, 1e-12);
  EXPECT_EQ(r[0].analytic, 2.0);
  EXPECT_NEAR(r[1].oracle, 5.1865039671258421, 1e-12);
  EXPECT_LE(r[1].oracle, 5.2);
  EXPECT_GT(r[2].oracle / 50.0, 1.0);
  for (const auto& x : r) EXPECT_TRUE(x.pass);
  EXPECT_LT(r[2].abs_err, r[1].abs_err);
}

TEST(MillsRatio, LogGridNoViolations) {
  const auto g = log_grid(0.01, 50.0, 200);
  ASSERT_EQ(g.size(), 200u);
  EXPECT_NEAR(g.front(), 0.01, 1e-15);
  EXPECT_NEAR(g.back(), 50.0, 1e-12);
  for (const auto& r : mills_ratio_bound_check(g)) EXPECT_TRUE(r.pass) << r.point;
  EXPECT_THROW(mills_ratio_bound_check(std::vector<double>{}), ConfigError);
}

TEST(Massart, ZeroFunctions) {
  Rng rng(1);
  const std::vector<double> z(500, 0.0);
  const auto r = massart_rademacher_check(z, z, 1.0, 100, rng);
  EXPECT_EQ(r.rademacher.value, 0.0);
  EXPECT_TRUE(r.pass);
}

TEST(Massart, IdenticalFunctions) {
  // single-function class: the expectation is zero
  Rng rng(2);
  std::vector<double> f(1000);
  for (auto& v : f) v = std::normal_distribution<double>(0.0, 1.0)(rng);
  const auto r = massart_rademacher_check(f, f, 1e9, 4000, rng);
  EXPECT_LT(std::abs(r.rademacher.value), 4.0 * r.rademacher.se);
  EXPECT_TRUE(r.pass);
}

TEST(Massart, RandomNetworkPair) {
  Rng rng(3);
  const MlpArchitecture arch{1, 3, 8, Activation::tanh};
  const auto a = MlpScoreModel::init(arch, rng), b = MlpScoreModel::init(arch, rng);
  Points xs;
  for (int i = 0; i < 1000; ++i) xs.push_back(standard_normal(1, rng));
  const auto r = massart_rademacher_check(a, b, xs, 0.5, 10'000, rng);
  EXPECT_TRUE(r.pass);
  EXPECT_GT(r.rademacher.value, 0.0);
  EXPECT_LE(r.rademacher.value, r.l2);
  EXPECT_NEAR(r.certificate, massart_bound(std::max(a.max_abs_param(), b.max_abs_param()), 8, 3, 1), 1e-12);
}

TEST(Massart, Errors) {
  Rng rng(4);
  const std::vector<double> a(99, 1.0), b(100, 1.0);
  EXPECT_THROW(massart_rademacher_check(a, a, 1.0, 10, rng), ConfigError);
  EXPECT_THROW(massart_rademacher_check(a, b, 1.0, 10, rng), ContractError);
}

namespace {

struct Constant {
  Vec c;
  Vec score(const Vec&, double) const { return c; }
};

}  // namespace

TEST(GeneralizationGap, DecaysAsRootN) {
  Rng rng(5);
  const auto g = GaussianMixture::mixture_1d({1.0}, {0.5}, {0.8});
  const LinearScoreModel frozen{Mat::Constant(1, 1, -0.6), Vec::Constant(1, 0.1)};
  const std::vector<std::size_t> ns{100, 1000, 10'000, 100'000};
  const auto p = generalization_gap_probe(frozen, g, 0.4, ns, 30, 2'000'000, 0.05, rng);
  EXPECT_GE(p.fit.slope, -0.65);
  EXPECT_LE(p.fit.slope, -0.35);
  for (const auto& r : p.rows) EXPECT_GE(r.quantile_gap, r.median_gap);
}

TEST(GeneralizationGap, LargeSampleWithinPopulationError) {
  Rng rng(6);
  const auto g = GaussianMixture::standard(1);
  const Constant c{Vec::Constant(1, 0.3)};
  const std::vector<std::size_t> ns{1'000'000};
  const auto p = generalization_gap_probe(c, g, 0.5, ns, 2, 4'000'000, 0.05, rng);
  // gap of an n = 1e6 average against a 4e6 average
  const double se = std::sqrt(p.per_sample_var / 1e6 + p.population.se * p.population.se);
  EXPECT_LT(p.rows[0].median_gap, 3.0 * se);
}

TEST(GeneralizationGap, ConstantModelFollowsClt) {
  Rng rng(7);
  const auto g = GaussianMixture::standard(1);
  const Constant c{Vec::Constant(1, -0.2)};
  const std::vector<std::size_t> ns{100, 1000};
  const auto p = generalization_gap_probe(c, g, 0.8, ns, 400, 1'000'000, 0.05, rng);
  for (const auto& r : p.rows) {
    const double ratio = r.var_empirical * static_cast<double>(r.n) / p.per_sample_var;
    EXPECT_GT(ratio, 1.0 / 1.5) << r.n;
    EXPECT_LT(ratio, 1.5) << r.n;
  }
}

TEST(GeneralizationGap, Errors) {
  Rng rng(8);
  const auto g = GaussianMixture::standard(1);
  const Constant c{Vec::Zero(1)};
  EXPECT_THROW(generalization_gap_probe(c, g, 0.5, std::vector<std::size_t>{}, 5, 1000, 0.05, rng), ConfigError);
  EXPECT_THROW(generalization_gap_probe(c, g, 0.5, std::vector<std::size_t>{100, 10}, 5, 1000, 0.05, rng),
               ConfigError);
}

TEST(QuadraticGrowth, ScalarQuadraticIsTight) {
  // L = lambda/2 (theta - theta*)^2 meets the bound with equality
  Rng rng(11);
  const auto q = QuadraticTestbed::scalar(2.5, 0.7, 1.0);
  const auto r = quadratic_growth_check(q, 2.5, 20, 3.0, rng);
  EXPECT_TRUE(r.pass);
  EXPECT_NEAR(r.oracle / r.analytic, 1.0, 1e-12);
}

TEST(QuadraticGrowth, LinearFamilyNoViolations) {
  Rng rng(9);
  for (const auto& g : {GaussianMixture::mixture_1d({1.0}, {0.4}, {0.3}),
                        GaussianMixture::gaussian((Vec(2) << 1.0, -1.0).finished(),
                                                  (Mat(2, 2) << 0.6, 0.2, 0.2, 0.4).finished())}) {
    const LinearScoreProblem prob(g, 0.2);
    const auto r = quadratic_growth_check(prob, 100, 2.0, rng);
    EXPECT_TRUE(r.pass);
    EXPECT_LE(r.oracle, r.analytic * (1.0 + 1e-9));
  }
}

TEST(QuadraticGrowth, Errors) {
  Rng rng(10);
  const LinearScoreProblem prob(GaussianMixture::standard(1), 0.5);
  EXPECT_THROW(quadratic_growth_check(prob, 0, 1.0, rng), ConfigError);
}
