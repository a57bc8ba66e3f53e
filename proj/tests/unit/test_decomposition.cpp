#include "scorelab/decomposition.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include <cmath>

using namespace scorelab;

namespace {

std::vector<ForwardDraw> draws(const GaussianMixture& g, double t, std::size_t n, Rng& rng) {
  std::vector<ForwardDraw> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(draw_forward(g, t, rng));
  return out;
}

struct Zero {
  int d;
  Vec score(const Vec&, double) const { return Vec::Zero(d); }
};

struct HalfTrue {
  GaussianMixture g;
  Vec score(const Vec& x, double t) const { return 0.5 * true_score(g, x, t); }
};

}  // namespace

TEST(EstimateA, ExactScoreIsZero) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {0.5}, {0.8});
  Rng rng(1);
  const auto a = estimate_A(population_linear_minimizer(g, 0.4), g, 0.4, 2000, rng);
  EXPECT_LT(a.value, 1e-12);
}

TEST(EstimateA, ZeroModelOnStationaryTarget) {
  const auto g = GaussianMixture::standard(3);
  Rng rng(2);
  const auto a = estimate_A(Zero{3}, g, 0.7, 200'000, rng);
  EXPECT_LT(std::abs(a.value - 3.0), 4.0 * a.se);
}

TEST(EstimateA, HalfScore) {
  const auto g = GaussianMixture::standard(2);
  Rng rng(3);
  const auto a = estimate_A(HalfTrue{g}, g, 1.1, 200'000, rng);
  EXPECT_LT(std::abs(a.value - 0.5), 4.0 * a.se);
}

TEST(EstimateA, RejectsSmallBudget) {
  const auto g = GaussianMixture::standard(1);
  Rng rng(4);
  EXPECT_THROW(estimate_A(Zero{1}, g, 0.5, 999, rng), ConfigError);
}

TEST(Decompose, OracleModeComponents) {
  const auto g = GaussianMixture::gaussian((Vec(2) << 1.0, -0.5).finished(),
                                           (Mat(2, 2) << 0.5, 0.1, 0.1, 0.3).finished());
  const double t = 0.3;
  Rng rng(5);
  const auto sample = draws(g, t, 500, rng);
  const auto mins = closed_form_minimizers(g, t, sample);
  // feeding the ERM as the trained model
  const auto d = decompose(mins.theta_b, g, t, sample, 100'000, rng);
  EXPECT_LT(d.e_approx.value, 1e-10);
  EXPECT_LT(d.e_opt.value, 1e-12);
  EXPECT_TRUE(d.inequality_holds());
  EXPECT_EQ(d.mode, DecompositionMode::oracle);
  const double closed = e_stat_closed_form(mins, g, t);
  EXPECT_LT(std::abs(d.e_stat.value - closed), 4.0 * d.e_stat.se);
}

TEST(Decompose, TriangleHoldsPointwise) {
  // with common points A <= 3 (sum of components) for every draw
  const auto g = GaussianMixture::mixture_1d({0.3, 0.7}, {-1.0, 1.5}, {0.4, 0.6});
  Rng rng(6);
  for (double t : {0.05, 0.5, 2.0}) {
    const auto sample = draws(g, t, 200, rng);
    LinearScoreModel hat = population_linear_minimizer(g, t);
    hat.A(0, 0) *= 1.3;
    hat.b[0] += 0.2;
    const auto d = decompose(hat, g, t, sample, 5000, rng);
    EXPECT_LE(d.A.value, 3.0 * (d.e_approx.value + d.e_stat.value + d.e_opt.value) + 1e-12);
    EXPECT_GT(d.e_approx.value, 0.0);
    EXPECT_TRUE(d.flags.empty());
  }
}

TEST(Decompose, TrueScoreResponseRemovesStatisticalError) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {0.2}, {0.7});
  Rng rng(7);
  const auto sample = draws(g, 0.6, 50, rng);
  const auto mins = closed_form_minimizers(g, 0.6, sample, RegressionTarget::true_score);
  EXPECT_LT(e_stat_closed_form(mins, g, 0.6), 1e-20);
}

TEST(Decompose, UnconvergedProxiesAreUntrusted) {
  const MlpArchitecture arch{1, 2, 4, Activation::tanh};
  Rng rng(8);
  const auto g = GaussianMixture::standard(1);
  const auto data = draws(g, 0.5, 64, rng);
  const auto init = MlpScoreModel::init(arch, rng);
  const auto pa = fit_full_batch(init, data, 0.05, 3);
  const auto pb = fit_full_batch(init, data, 0.05, 3);
  EXPECT_EQ(pa.iterations, 3u);
  EXPECT_FALSE(pa.converged());
  const auto d = decompose(init, pa, pb, g, 0.5, 2000, rng);
  EXPECT_FALSE(d.trusted);
  EXPECT_EQ(d.mode, DecompositionMode::mlp);
  EXPECT_EQ(d.flags.size(), 2u);
}

TEST(Decompose, FullBatchFitLowersLoss) {
  const MlpArchitecture arch{1, 2, 8, Activation::gelu};
  Rng rng(9);
  const auto g = GaussianMixture::standard(1);
  const auto data = draws(g, 0.5, 256, rng);
  const auto init = MlpScoreModel::init(arch, rng);
  const auto fit = fit_full_batch(init, data, 0.05, 400);
  EXPECT_LT(denoising_loss(fit.model, data).loss, denoising_loss(init, data).loss);
}

TEST(WeightedSum, ZeroErrors) {
  const auto grid = make_time_grid(2.0, 10, 0.01, 0.05);
  const std::vector<double> a(10, 0.0);
  const auto w = weighted_error_sum(a, grid, 0.2);
  EXPECT_EQ(w.sum, 0.0);
  EXPECT_TRUE(w.within_bound);
}

TEST(WeightedSum, SingleStep) {
  const auto grid = make_time_grid(3.0, 1, 0.2, 0.5);
  const std::vector<double> a{1.7};
  EXPECT_NEAR(weighted_error_sum(a, grid).sum, 1.7 * (3.0 - 0.5 - 0.2), 1e-15);
}

TEST(WeightedSum, MisalignedLengths) {
  const auto grid = make_time_grid(2.0, 4, 0.1);
  const std::vector<double> a(3, 1.0);
  EXPECT_THROW(weighted_error_sum(a, grid), ContractError);
}

TEST(WeightedSum, ZeroStopTimeGivesInfiniteBound) {
  const auto grid = make_time_grid(2.0, 4, 0.1);
  const std::vector<double> a(4, 1.0);
  const auto w = weighted_error_sum(a, grid, 0.1);
  EXPECT_TRUE(std::isinf(*w.bound));
  EXPECT_TRUE(w.within_bound);
}

TEST(WeightedSum, SyntheticEnvelopeRiemannSum) {
  const double eps = 0.3, T = 4.0, kap = 1e-3;
  for (int K : {100, 400, 1600}) {
    const auto grid = make_time_grid(T, K, 1e-3, kap);
    std::vector<double> a(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) a[k] = eps * eps / -std::expm1(-2.0 * (T - grid.times()[k]));
    const auto w = weighted_error_sum(a, grid, eps);
    const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
        [&](double t) { return eps * eps / -std::expm1(-2.0 * (T - t)); }, grid.t0(), T - kap, 20, 1e-12);
    EXPECT_NEAR(*w.exact_integral, integral, 1e-8 * integral);
    EXPECT_LE(*w.exact_integral, *w.bound);
    EXPECT_LE(w.sum, *w.bound * 1.05);
  }
}

TEST(Truncation, LargeKappaIsIdentity) {
  Rng rng(10);
  const auto g = GaussianMixture::standard(2);
  const auto ds = draws(g, 0.4, 100, rng);
  std::vector<Vec> vals;
  for (const auto& d : ds) vals.push_back(true_score(g, d.x, 0.4));
  const auto out = truncate_score(vals, ds, {1e9});
  for (std::size_t i = 0; i < vals.size(); ++i) EXPECT_EQ(out[i], vals[i]);
  const auto zero = truncate_score(vals, ds, {1e-300});
  for (const auto& v : zero) EXPECT_TRUE(v.isZero(0.0));
}

TEST(Truncation, CoordinateRule) {
  const auto d = make_forward_draw((Vec(2) << 0.0, 0.0).finished(), 0.5, (Vec(2) << 0.1, 2.0).finished());
  const Vec u = scaled_noise(d);
  const double sigma = std::sqrt(-std::expm1(-1.0));
  EXPECT_NEAR(u[1], 2.0 / sigma, 1e-12);
  const Vec out = truncate(Vec::Ones(2), d, {1.0});
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[1], 0.0);
}

TEST(Truncation, Errors) {
  auto d = make_forward_draw(Vec::Zero(1), 0.5, Vec::Ones(1));
  d.x0.resize(0);
  const std::vector<Vec> v{Vec::Ones(1)};
  EXPECT_THROW(truncate_score(v, std::span(&d, 1), {1.0}), ContractError);
  EXPECT_THROW(validate(TruncationSpec{-1.0}), DomainError);
  EXPECT_THROW(truncate_score(v, std::span<const ForwardDraw>(), {1.0}), ContractError);
  EXPECT_NEAR(default_trunc_kappa(2, 1000, 0.05), std::log(2.0 * 1000.0 / 0.05), 1e-12);
}

TEST(Truncation, EventRateMatchesGaussianTail) {
  const auto g = GaussianMixture::standard(1);
  Rng rng(11);
  const double t = 0.5;
  const auto r = truncation_rate(g, t, 2.0, 1'000'000, rng);
  EXPECT_LT(std::abs(r.frequency.value - r.gaussian_tail), 3.0 * r.frequency.se);
  EXPECT_LE(r.frequency.value, r.envelope);
}

TEST(TruncationGap, LargeKappaVanishes) {
  const auto g = GaussianMixture::standard(1);
  Rng rng(12);
  const LinearScoreModel m{Mat::Constant(1, 1, -0.5), Vec::Zero(1)};
  EXPECT_LT(truncation_gap(m, g, 0.8, {10.0}, 10'000, rng).value, 1e-8);
}

TEST(TruncationGap, ZeroKappaIsFullLoss) {
  const auto g = GaussianMixture::standard(2);
  const double k0 = 0.0;
  Rng r1(13), r2(13);
  const auto gap = truncation_gap_curve(Zero{2}, g, 0.8, std::span(&k0, 1), 10'000, r1).front();
  const auto full = population_score_loss(Zero{2}, g, 0.8, 10'000, r2);
  EXPECT_DOUBLE_EQ(gap.value, full.value);
}

TEST(TruncationGap, MonotoneInKappa) {
  const auto g = GaussianMixture::mixture_1d({0.5, 0.5}, {-1.0, 1.0}, {0.5, 0.5});
  const LinearScoreModel m{Mat::Constant(1, 1, -0.5), Vec::Zero(1)};
  const std::vector<double> ks{1.0, 2.0, 3.0};
  for (int rep = 0; rep < 20; ++rep) {
    Rng rng(100 + rep);
    const auto c = truncation_gap_curve(m, g, 0.5, ks, 10'000, rng);
    EXPECT_GE(c[0].value, c[1].value);
    EXPECT_GE(c[1].value, c[2].value);
  }
  Rng rng(1);
  EXPECT_THROW(truncation_gap(m, g, 0.5, {1.0}, 9999, rng), ConfigError);
}
