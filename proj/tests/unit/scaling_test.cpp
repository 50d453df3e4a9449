// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/rng.hpp"
#include "pac/scaling.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace pac {
namespace {

namespace fs = std::filesystem;

ReturnProfile logistic(double a, double k, double n0, double b, double flops_per_step, double params) {
  ReturnProfile p;
  p.a = a;
  p.k = k;
  p.n0 = n0;
  p.b = b;
  p.flops_per_step = flops_per_step;
  p.model_params = params;
  p.min_step = 0.0;
  p.max_step = 1e12;
  return p;
}

TEST(ReturnProfile, ConstantDataIsDegenerate) {
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 20; ++i) pts.emplace_back(1000.0 * i, 0.42);
  const ReturnProfile p = fit_return_profile(pts);
  EXPECT_TRUE(p.degenerate);
  EXPECT_NEAR(p.a, 0.0, 1e-12);
  EXPECT_NEAR(p.b, 0.42, 1e-12);
  for (double s : {0.0, 5e3, 1e7}) EXPECT_NEAR(p.predict(s), 0.42, 1e-12);
  EXPECT_THROW(fit_return_profile({{0, 1}, {1, 2}, {2, 3}}), std::invalid_argument);
}

TEST(ReturnProfile, RecoversCenteredLogistic) {
  // Both plateaus inside the sampled range.
  const ReturnProfile truth = logistic(0.8, 2e-5, 2e5, 0.1, 1, 1);
  Rng rng(3);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i <= 400; ++i) {
    const double s = 1000.0 * i;
    pts.emplace_back(s, truth.predict(s) + 0.01 * rng.normal());
  }
  const ReturnProfile fit = fit_return_profile(pts);
  EXPECT_FALSE(fit.degenerate);
  EXPECT_NEAR(fit.a, 0.8, 0.05 * 0.8);
  EXPECT_NEAR(fit.k, 2e-5, 0.05 * 2e-5);
  EXPECT_NEAR(fit.n0, 2e5, 0.05 * 2e5);
  EXPECT_NEAR(fit.b, 0.1, 0.05 * 0.1);
  EXPECT_EQ(fit.min_step, 0.0);
  EXPECT_EQ(fit.max_step, 4e5);
}

TEST(Envelope, SingleAndDominantProfiles) {
  const ReturnProfile p = logistic(1, 1e-3, 5e3, 0, 10, 100);
  for (const auto& e : envelope({p}, {1e3, 1e6}, 30)) {
    EXPECT_EQ(e.best_model, 0);
    EXPECT_DOUBLE_EQ(e.best_return, p.predict(e.flops / 10));
  }
  ReturnProfile worse = p;
  worse.a = 0.5;
  for (const auto& e : envelope({worse, p}, {1e3, 1e6}, 30)) EXPECT_EQ(e.best_model, 1);
}

TEST(Envelope, CrossoverWithinOneGridStep) {
  // The small model learns fast but saturates low; the large model costs 10x
  // per step and saturates high.
  const ReturnProfile small = logistic(0.5, 1e-3, 2e3, 0.0, 1.0, 1e6);
  const ReturnProfile large = logistic(1.0, 1e-3, 3e3, 0.0, 10.0, 1e7);
  auto gap = [&](double c) { return large.predict(c / 10.0) - small.predict(c); };
  double lo = 1e3;
  double hi = 1e6;
  ASSERT_LT(gap(lo), 0.0);
  ASSERT_GT(gap(hi), 0.0);
  for (int i = 0; i < 200; ++i) {
    const double mid = std::sqrt(lo * hi);
    (gap(mid) < 0.0 ? lo : hi) = mid;
  }
  const double crossing = lo;
  const int n = 200;
  const auto env = envelope({small, large}, {1e3, 1e6}, n);
  const double step = std::log(1e6 / 1e3) / (n - 1);
  int switches = 0;
  for (std::size_t i = 1; i < env.size(); ++i) {
    if (env[i].best_model != env[i - 1].best_model) {
      ++switches;
      EXPECT_EQ(env[i].best_model, 1);
      EXPECT_LE(std::abs(std::log(env[i].flops / crossing)), step);
    }
  }
  EXPECT_EQ(switches, 1);
  EXPECT_EQ(env.front().params, 1e6);
  EXPECT_EQ(env.back().params, 1e7);
}

TEST(PowerLaws, ExactSyntheticRecovery) {
  std::vector<ComputePoint> pts;
  for (double c = 1e15; c <= 1e21; c *= 10) pts.push_back({c, 2.0 * std::pow(c, 0.5), 3.0 * std::pow(c, 0.25)});
  const PowerLawFit f = fit_power_laws(pts);
  EXPECT_NEAR(f.a_exp, 0.5, 1e-9);
  EXPECT_NEAR(f.n0, 2.0, 1e-9 * 2.0);
  EXPECT_NEAR(f.b_exp, 0.25, 1e-9);
  EXPECT_NEAR(f.d0, 3.0, 1e-9 * 3.0);
  for (double r : f.n_residuals) EXPECT_NEAR(r, 0.0, 1e-9);
}

TEST(PowerLaws, ConstantAndErrors) {
  const PowerLawFit f = fit_power_laws({{1e3, 5, 7}, {1e4, 5, 7}, {1e5, 5, 7}});
  EXPECT_NEAR(f.a_exp, 0.0, 1e-12);
  EXPECT_NEAR(f.n0, 5.0, 1e-9);
  EXPECT_THROW(fit_power_laws({{1e3, 5, 7}, {1e3, 6, 8}}), std::invalid_argument);
  EXPECT_THROW(fit_power_laws({{1e3, 5, 7}, {1e4, -1, 8}}), std::invalid_argument);
}

TEST(IsoGrid, SingleProfileConstantAlongParams) {
  const ReturnProfile p = logistic(1, 1e-3, 5e3, 0, 10, 1e6);
  const IsoReturnGrid g = iso_return_grid({p}, {1e5, 1e7}, {1e3, 1e6}, {0.5}, 10, 40);
  ASSERT_EQ(g.value.size(), 10u);
  for (const auto& row : g.value) EXPECT_EQ(row, g.value.front());
  EXPECT_TRUE(g.extrapolated.front().front());
  EXPECT_NE(g.to_csv().find('\n'), std::string::npos);
}

TEST(IsoGrid, LevelSetsMonotoneAndMatchHandComputedCrossings) {
  const ReturnProfile small = logistic(0.6, 1e-3, 2e3, 0.1, 1.0, 1e6);
  const ReturnProfile large = logistic(0.9, 5e-4, 4e3, 0.05, 8.0, 1e8);
  const std::vector<double> levels{0.3, 0.4, 0.5};
  const IsoReturnGrid g = iso_return_grid({large, small}, {1e6, 1e8}, {1e2, 1e7}, levels, 21, 400);
  ASSERT_EQ(g.contours.size(), 3u);
  for (std::size_t row = 0; row < g.params.size(); ++row) {
    for (std::size_t l = 1; l < levels.size(); ++l) {
      EXPECT_GE(g.contours[l][row].second, g.contours[l - 1][row].second);
    }
  }
  // On the endpoint rows the contour is the logistic inverse of one profile.
  auto inverse = [](const ReturnProfile& p, double level) {
    return (p.n0 - std::log(p.a / (level - p.b) - 1.0) / p.k) * p.flops_per_step;
  };
  for (std::size_t l = 0; l < levels.size(); ++l) {
    EXPECT_NEAR(g.contours[l].front().second / inverse(small, levels[l]), 1.0, 2e-3);
    EXPECT_NEAR(g.contours[l].back().second / inverse(large, levels[l]), 1.0, 2e-3);
  }
}

TEST(Flops, BackwardAndUpdateIdentities) {
  const FlopModel xxs = count_flops(FlopArch::scale("XXS"), 512, 100, published_fwd("XXS"));
  EXPECT_NEAR(xxs.bwd() / xxs.fwd(), 2.01, 1e-12);
  EXPECT_NEAR(xxs.bwd(), 1.573e10, 0.0005 * 1.573e10);
  EXPECT_NEAR(xxs.update(), 1.206e13, 0.0005 * 1.206e13);
  const FlopModel l = count_flops(FlopArch::scale("L"), 512, 100, published_fwd("L"));
  EXPECT_NEAR(l.bwd(), 2.090e11, 0.0005 * 2.090e11);
  EXPECT_NEAR(l.update(), 1.602e14, 0.0005 * 1.602e14);
  const FlopModel inf = count_flops(FlopArch::scale("XXS"), 1, 1000000000);
  EXPECT_NEAR(inf.bwd() / inf.fwd(), 2.0, 1e-8);
}

TEST(Flops, ComponentsSumAndErrors) {
  const FlopModel m = count_flops(FlopArch::scale("S"), 4, 10);
  const double sum = m.enc_p + m.enc_v + m.enc_l + m.enc_a + m.xattn_in + m.n_blocks * m.sattn_proc + m.xattn_pi + m.xattn_q;
  EXPECT_NEAR(m.fwd(), sum, 1e-9 * sum);
  EXPECT_GT(count_flops(FlopArch::scale("L"), 1, 1).fwd(), count_flops(FlopArch::scale("XXS"), 1, 1).fwd());
  EXPECT_THROW(count_flops(FlopArch::scale("S"), 0, 1), std::invalid_argument);
  EXPECT_THROW(count_flops(FlopArch::scale("S"), 1, 0), std::invalid_argument);
  EXPECT_EQ(scale_names().size(), 5u);
}

TEST(LoadProfiles, ReadsManifestAndCurves) {
  const fs::path dir = fs::temp_directory_path() / "pac_scaling_profiles";
  fs::create_directories(dir);
  {
    std::ofstream m(dir / "manifest.csv");
    m << "model,params,flops_per_step,tokens_per_step\nsmall,1e6,10,512\n";
    std::ofstream c(dir / "small.csv");
    c << "step,avg_return\n";
    const ReturnProfile truth = logistic(0.7, 1e-3, 3e3, 0.1, 10, 1e6);
    for (int i = 0; i <= 60; ++i) c << 100 * i << "," << truth.predict(100.0 * i) << "\n";
  }
  const auto profiles = load_profiles(dir);
  ASSERT_EQ(profiles.size(), 1u);
  EXPECT_EQ(profiles[0].name, "small");
  EXPECT_EQ(profiles[0].model_params, 1e6);
  EXPECT_EQ(profiles[0].flops_per_step, 10.0);
  EXPECT_EQ(profiles[0].tokens_per_step, 512.0);
  EXPECT_NEAR(profiles[0].a, 0.7, 1e-3);
  EXPECT_NEAR(profiles[0].n0, 3e3, 3.0);
  EXPECT_THROW(load_profiles(dir / "missing"), std::exception);
}

}  // namespace
}  // namespace pac
