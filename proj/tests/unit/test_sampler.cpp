#include "scorelab/sampler.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace scorelab;

namespace {

Estimate coord_mean(const Points& xs, int j) {
  std::vector<double> v;
  for (const auto& x : xs) v.push_back(x[j]);
  return mean_se(v);
}

// Sample variance and its standard error under a Gaussian law.
Estimate coord_var(const Points& xs, int j) {
  std::vector<double> v;
  for (const auto& x : xs) v.push_back(x[j]);
  const double s2 = sample_variance(v);
  return {s2, s2 * std::sqrt(2.0 / static_cast<double>(v.size() - 1))};
}

ReverseRunSpec spec_for(TimeGrid grid, std::size_t n, SamplerVariant v, std::uint64_t seed) {
  ReverseRunSpec s;
  s.grid = std::move(grid);
  s.n_samples = n;
  s.variant = v;
  s.seed = seed;
  s.workers = 4;
  return s;
}

}  // namespace

TEST(ReverseStep, DdpmPureRescale) {
  const auto grid = make_time_grid(2.0, 8, 0.1);
  const Vec x = (Vec(2) << 0.7, -1.2).finished();
  const Vec out = reverse_step_ddpm(x, 3, Vec::Zero(2), Vec::Zero(2), grid);
  EXPECT_TRUE(out.isApprox(x / std::sqrt(grid.step(3).alpha), 1e-15));
}

TEST(ReverseStep, DdpmSmallStepIsIdentity) {
  const auto grid = make_time_grid(1.0 + 1e-9, 1, 1.0);
  const Vec x = Vec::Constant(1, 0.4);
  const Vec out = reverse_step_ddpm(x, 0, Vec::Constant(1, 0.9), Vec::Constant(1, 1.1), grid);
  EXPECT_NEAR(out[0], x[0], 1e-4);
}

TEST(ReverseStep, DdpmGuardsVanishingAlpha) {
  const auto grid = make_time_grid(400.0, 1, 1.0);
  EXPECT_THROW(reverse_step_ddpm(Vec::Zero(1), 0, Vec::Zero(1), Vec::Zero(1), grid), DivisionGuardError);
}

TEST(ReverseStep, CoefficientsMatchStepFunctions) {
  const auto grid = make_time_grid(3.0, 7, 0.05, 0.2, GridSpacing::geometric_near_t0);
  Rng rng(3);
  for (std::size_t k = 0; k < 7; ++k) {
    const Vec x = standard_normal(2, rng), s = standard_normal(2, rng), z = standard_normal(2, rng);
    const double sigma = std::sqrt(-std::expm1(-2.0 * grid.times()[k + 1]));
    const Vec ddpm = reverse_step_ddpm(x, k, Vec(-sigma * s), z, grid);
    const Vec ei = reverse_step_exponential(x, k, s, z, grid);
    const Vec em = reverse_step_euler_maruyama(x, k, s, z, grid);
    auto affine = [&](SamplerVariant v) {
      const auto c = step_coefficients(v, k, grid);
      return Vec(c.a * x + c.c * s + c.g * z);
    };
    EXPECT_TRUE(ddpm.isApprox(affine(SamplerVariant::ddpm), 1e-13));
    EXPECT_TRUE(ei.isApprox(affine(SamplerVariant::exponential), 1e-13));
    EXPECT_TRUE(em.isApprox(affine(SamplerVariant::euler_maruyama), 1e-13));
  }
}

TEST(ReverseStep, DdpmWithStationaryScoreKeepsUnitVariance) {
  // For s = -x, x' = sqrt(alpha) x + sqrt(beta) z.
  const auto grid = make_time_grid(2.0, 5, 0.1);
  for (std::size_t k = 0; k < 5; ++k) {
    const auto c = step_coefficients(SamplerVariant::ddpm, k, grid);
    EXPECT_NEAR((c.a - c.c) * (c.a - c.c) + c.g * c.g, 1.0, 1e-14);
  }
}

TEST(ReverseStep, ExponentialSmallStepLimit) {
  for (double dt : {1e-2, 1e-3, 1e-4}) {
    const auto grid = make_time_grid(1.0 + dt, 1, 1.0);
    const Vec x = Vec::Constant(1, 0.8);
    const Vec out = reverse_step_exponential(x, 0, Vec::Constant(1, -0.3), Vec::Zero(1), grid);
    EXPECT_NEAR(out[0] - x[0], (0.8 - 0.6) * dt, 2.0 * dt * dt);
  }
}

TEST(Generate, StationaryOracleFullNoise) {
  const auto g = GaussianMixture::standard(2);
  auto spec = spec_for(make_time_grid(3.0, 32, 0.05), 100'000, SamplerVariant::ddpm, 11);
  spec.zero_final_noise = false;
  spec.snapshot_steps = {31, 16, 0};
  const OracleScore oracle(g, spec.grid.times());
  const auto res = generate(spec, oracle, &g);
  ASSERT_EQ(res.snapshots.size(), 3u);
  for (const auto& [k, pts] : res.snapshots) {
    ASSERT_EQ(pts.size(), 100'000u);
    for (int j = 0; j < 2; ++j) {
      const auto m = coord_mean(pts, j), v = coord_var(pts, j);
      EXPECT_LT(std::abs(m.value), 4.0 * m.se) << "step " << k;
      EXPECT_LT(std::abs(v.value - 1.0), 4.0 * v.se) << "step " << k;
    }
  }
}

TEST(Generate, StationaryOracleZeroFinalNoiseShrinksByAlpha) {
  const auto g = GaussianMixture::standard(1);
  auto spec = spec_for(make_time_grid(3.0, 32, 0.05), 100'000, SamplerVariant::ddpm, 12);
  const OracleScore oracle(g, spec.grid.times());
  const auto res = generate(spec, oracle, &g);
  const auto v = coord_var(res.samples, 0);
  const double expect = std::exp(-2.0 * spec.grid.deltas()[0]);
  EXPECT_LT(std::abs(v.value - expect), 4.0 * v.se);
}

TEST(Generate, ExponentialStationaryAtSmallStep) {
  // stationary variance of the frozen-score update is 1 + O(Delta)
  const auto g = GaussianMixture::standard(1);
  auto spec = spec_for(make_time_grid(2.0, 512, 0.01), 100'000, SamplerVariant::exponential, 13);
  spec.zero_final_noise = false;
  const OracleScore oracle(g, spec.grid.times());
  const auto res = generate(spec, oracle, &g);
  const auto m = coord_mean(res.samples, 0), v = coord_var(res.samples, 0);
  EXPECT_LT(std::abs(m.value), 4.0 * m.se);
  EXPECT_LT(std::abs(v.value - 1.0), 4.0 * v.se + 2.0 * spec.grid.deltas()[0]);
}

TEST(Generate, ExponentialMatchesClosedFormMoments) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {1.0}, {0.5});
  auto spec = spec_for(make_time_grid(3.0, 512, 0.01), 100'000, SamplerVariant::exponential, 14);
  const OracleScore oracle(g, spec.grid.times());
  const auto res = generate(spec, oracle, &g);
  const auto closed = propagate_gaussian(
      spec.grid, spec.variant, true, [&](double t) { return population_linear_minimizer(g, t); },
      init_moments(InitKind::exact, g, spec.grid.t_end()));
  EXPECT_NEAR(coord_mean(res.samples, 0).value / closed.mean[0], 1.0, 0.01);
  EXPECT_NEAR(coord_var(res.samples, 0).value / closed.cov(0, 0), 1.0, 0.01);
}

TEST(PropagateGaussian, MatchesScalarRecursion) {
  // scalar recursion written out directly for a 1d Gaussian target
  const double mu = 0.7, s0 = 0.4;
  const auto g = GaussianMixture::mixture_1d({1.0}, {mu}, {s0});
  const auto grid = make_time_grid(2.5, 40, 0.02, 0.0, GridSpacing::geometric_near_t0);
  for (auto v : {SamplerVariant::ddpm, SamplerVariant::exponential, SamplerVariant::euler_maruyama}) {
    double m = std::exp(-grid.t_end()) * mu;
    double var = std::exp(-2.0 * grid.t_end()) * s0 * s0 - std::expm1(-2.0 * grid.t_end());
    for (int k = grid.steps() - 1; k >= 0; --k) {
      const double t = grid.times()[k + 1], dt = grid.times()[k + 1] - grid.times()[k];
      const double vt = std::exp(-2.0 * t) * s0 * s0 + 1.0 - std::exp(-2.0 * t);
      const double mt = std::exp(-t) * mu;
      double a, c, g2;
      if (v == SamplerVariant::ddpm) {
        a = std::exp(dt);
        c = std::exp(dt) - std::exp(-dt);
        g2 = 1.0 - std::exp(-2.0 * dt);
      } else if (v == SamplerVariant::exponential) {
        a = std::exp(dt);
        c = 2.0 * (std::exp(dt) - 1.0);
        g2 = std::exp(2.0 * dt) - 1.0;
      } else {
        a = 1.0 + dt;
        c = 2.0 * dt;
        g2 = 2.0 * dt;
      }
      // s(x) = -(x - mt) / vt
      const double f = a - c / vt;
      m = f * m + c * mt / vt;
      var = f * f * var + (k == 0 ? 0.0 : g2);
    }
    const auto out = propagate_gaussian(
        grid, v, true, [&](double t) { return population_linear_minimizer(g, t); },
        init_moments(InitKind::exact, g, grid.t_end()));
    EXPECT_NEAR(out.mean[0], m, 1e-12) << to_string(v);
    EXPECT_NEAR(out.cov(0, 0), var, 1e-12) << to_string(v);
  }
}

TEST(PropagateGaussian, FineGridRecoversMarginal) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {1.0}, {0.3});
  const auto grid = make_time_grid(3.0, 8192, 0.05);
  const auto out = propagate_gaussian(
      grid, SamplerVariant::ddpm, false, [&](double t) { return population_linear_minimizer(g, t); },
      init_moments(InitKind::exact, g, grid.t_end()));
  const auto [m, c] = marginal_moments(g, 0.05);
  EXPECT_NEAR(out.mean[0], m[0], 2e-3);
  EXPECT_NEAR(out.cov(0, 0), c(0, 0), 2e-3);
}

TEST(Generate, SingleStepReproducesManualPush) {
  const auto g = GaussianMixture::mixture_1d({0.4, 0.6}, {-1.0, 2.0}, {0.5, 0.3});
  auto spec = spec_for(make_time_grid(1.0, 1, 0.99), 5, SamplerVariant::ddpm, 21);
  spec.zero_final_noise = false;
  const OracleScore oracle(g);
  const auto res = generate(spec, oracle, &g);
  Rng init_rng = make_stream(derive_seed(21, kInitStream), 0);
  Rng noise_rng = make_stream(derive_seed(21, kNoiseStream), 0);
  const auto pT = g.marginal_at(1.0);
  Points x0;
  for (int i = 0; i < 5; ++i) x0.push_back(pT.sample(init_rng));
  std::normal_distribution<double> n01;
  for (int i = 0; i < 5; ++i) {
    const Vec z = Vec::Constant(1, n01(noise_rng));
    const Vec s = pT.score(x0[i]);
    const Vec eps = -std::sqrt(-std::expm1(-2.0)) * s;
    EXPECT_NEAR(res.samples[i][0], reverse_step_ddpm(x0[i], 0, eps, z, spec.grid)[0], 1e-13);
  }
}

TEST(Generate, WorkerCountDoesNotChangeOutput) {
  const auto g = GaussianMixture::standard(2);
  auto spec = spec_for(make_time_grid(2.0, 16, 0.05), 1000, SamplerVariant::exponential, 5);
  spec.init = InitKind::standard_normal;
  const OracleScore oracle(g);
  spec.workers = 1;
  const auto a = generate(spec, oracle, &g);
  spec.workers = 7;
  const auto b = generate(spec, oracle, &g);
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i], b.samples[i]);
}

TEST(Generate, DivergenceReportsStep) {
  const auto g = GaussianMixture::standard(1);
  auto spec = spec_for(make_time_grid(2.0, 16, 0.05), 10, SamplerVariant::ddpm, 6);
  const ScaledScore<OracleScore> wild{OracleScore(g), std::numeric_limits<double>::infinity()};
  try {
    generate(spec, wild, &g);
    FAIL() << "expected divergence";
  } catch (const SamplerDivergence& e) {
    EXPECT_EQ(e.index(), 15u);
  }
}

TEST(Generate, Errors) {
  const auto g = GaussianMixture::standard(1);
  auto spec = spec_for(make_time_grid(2.0, 4, 0.05), 0, SamplerVariant::ddpm, 6);
  const OracleScore oracle(g);
  EXPECT_THROW(generate(spec, oracle, &g), ConfigError);
  spec.n_samples = 4;
  EXPECT_THROW(generate(spec, oracle, static_cast<const GaussianMixture*>(nullptr)), ConfigError);
  spec.init = InitKind::standard_normal;
  EXPECT_THROW(generate(spec, oracle, static_cast<const GaussianMixture*>(nullptr)), ConfigError);
  spec.dim = 1;
  EXPECT_NO_THROW(generate(spec, oracle, static_cast<const GaussianMixture*>(nullptr)));
  EXPECT_THROW(parse_sampler_variant("leapfrog"), ConfigError);
}

TEST(Telemetry, OffsetScoreGivesCameronMartinSum) {
  const auto g = GaussianMixture::standard(1);
  auto spec = spec_for(make_time_grid(2.0, 64, 0.01), 300, SamplerVariant::euler_maruyama, 8);
  const OracleScore oracle(g);
  for (double c : {0.0, 0.3, 0.6}) {
    const OffsetScore<OracleScore> shifted{oracle, Vec::Constant(1, c)};
    const auto res = generate(spec, shifted, &g, &oracle);
    ASSERT_TRUE(res.telemetry.has_shadow());
    EXPECT_EQ(res.telemetry.score_calls, 2u * 300u * 64u);
    for (double w : res.telemetry.path_weighted) EXPECT_NEAR(w, c * c * (2.0 - 0.01), 1e-12);
    for (double s : res.telemetry.step_gap_mean) EXPECT_NEAR(s, c * c, 1e-12);
  }
}

TEST(VariantAgreement, MeanSquareGapScalesAsDeltaSquared) {
  const auto g = GaussianMixture::mixture_1d({1.0}, {0.5}, {0.5});
  std::vector<double> dts, mse;
  for (int K : {32, 64, 128, 256, 512}) {
    auto spec = spec_for(make_time_grid(2.0, K, 0.05), 4000, SamplerVariant::ddpm, 40);
    const OracleScore oracle(g, spec.grid.times());
    const auto a = generate(spec, oracle, &g);
    spec.variant = SamplerVariant::exponential;
    const auto b = generate(spec, oracle, &g);
    std::vector<double> d2;
    for (std::size_t i = 0; i < a.samples.size(); ++i) d2.push_back((a.samples[i] - b.samples[i]).squaredNorm());
    dts.push_back(spec.grid.deltas()[0]);
    mse.push_back(mean_se(d2).value);
  }
  EXPECT_NEAR(fit_loglog(dts, mse).slope, 2.0, 0.3);
}
