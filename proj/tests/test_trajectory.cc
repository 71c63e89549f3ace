// Copyright 2026 The probekit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "probekit/synthgen.h"
#include "probekit/trajectory.h"

namespace probekit {
namespace {

ProbeScore score(std::int64_t step, const std::string& layer, int fold, double value) {
  return {"p", "m", step, layer, fold, value};
}

TEST(BestLayer, MeanOverFoldsThenMax) {
  const std::vector<ProbeScore> s = {
      score(1000, "L1", 0, 0.2), score(1000, "L1", 1, 0.4),
      score(1000, "L2", 0, 0.5), score(1000, "L2", 1, 0.3),
      score(2000, "L1", 0, 0.9), score(2000, "L1", 1, 0.7),
      score(2000, "L2", 0, 0.1), score(2000, "L2", 1, 0.2)};
  const auto best = best_layer_scores(s);
  ASSERT_EQ(best.size(), 2u);
  EXPECT_EQ(best[0].step, 1000);
  EXPECT_EQ(best[0].layer_id, "L2");
  EXPECT_DOUBLE_EQ(best[0].score, 0.4);
  EXPECT_EQ(best[1].layer_id, "L1");
  EXPECT_DOUBLE_EQ(best[1].score, 0.8);
}

TEST(BestLayer, TiesGoToEarlierLayer) {
  const std::vector<ProbeScore> s = {score(5, "L9", 0, 0.5), score(5, "L2", 0, 0.5)};
  EXPECT_EQ(best_layer_scores(s)[0].layer_id, "L9");
  EXPECT_EQ(best_layer_scores(s, {"L2", "L9"})[0].layer_id, "L2");
}

TEST(BestLayer, RejectsMixedInput) {
  auto s = std::vector<ProbeScore>{score(5, "L1", 0, 0.5), score(5, "L1", 1, 0.5)};
  s[1].model_id = "other";
  EXPECT_THROW(best_layer_scores(s), ValidationError);
  EXPECT_THROW(best_layer_scores({}), ValidationError);
}

TEST(FitSigmoid, RecoversGeneratingCurve) {
  std::vector<double> steps;
  for (int i = 0; i <= 20; ++i) steps.push_back(5000.0 * i);
  const auto ys = gen_sigmoid_series(1.0, 5e4, 0.0, 1e-4, steps, 0.0, 0);
  const auto fit = fit_sigmoid(steps, ys);
  EXPECT_NEAR(fit.a, 1.0, 1e-6);
  EXPECT_NEAR(fit.b, 5e4, 1e-2);
  EXPECT_NEAR(fit.c, 0.0, 1e-6);
  EXPECT_NEAR(fit.k, 1e-4, 1e-10);
  EXPECT_LT(fit.residual_rmse, 1e-8);
}

TEST(FitSigmoid, NoisyRecovery) {
  std::vector<double> steps;
  for (int i = 0; i <= 20; ++i) steps.push_back(5000.0 * i);
  const auto ys = gen_sigmoid_series(0.6, 4e4, 0.1, 2e-4, steps, 0.01, 3);
  const auto fit = fit_sigmoid(steps, ys);
  EXPECT_NEAR(fit.a, 0.6, 0.05);
  EXPECT_NEAR(fit.b, 4e4, 3e3);
  EXPECT_NEAR(fit.c, 0.1, 0.03);
  EXPECT_LT(fit.residual_rmse, 0.02);
}

TEST(FitSigmoid, MatchesReferenceLeastSquares) {
  std::vector<double> xs;
  for (int i = 1; i <= 10; ++i) xs.push_back(1000.0 * i);
  const std::vector<double> ys = {.11, .12, .16, .25, .41, .58, .70, .76, .79, .80};
  const auto fit = fit_sigmoid(xs, ys);
  EXPECT_NEAR(fit.a, 0.7066441607084135, 1e-6);
  EXPECT_NEAR(fit.b, 5244.433733141247, 1e-3);
  EXPECT_NEAR(fit.c, 0.09683306723913111, 1e-6);
  EXPECT_NEAR(fit.k, 0.001017741089992851, 1e-9);
  EXPECT_NEAR(fit.residual_rmse, 0.0024962813548097835, 1e-9);
}

TEST(FitSigmoid, ConstantSeries) {
  const auto fit = fit_sigmoid({1, 2, 3, 4, 5}, {0.3, 0.3, 0.3, 0.3, 0.3});
  for (double x : {1.0, 3.0, 5.0}) EXPECT_NEAR(fit(x), 0.3, 1e-12);
  EXPECT_LT(fit.residual_rmse, 1e-12);
}

TEST(FitSigmoid, Errors) {
  EXPECT_THROW(fit_sigmoid({1, 2, 3, 4}, {0, 0, 1, 1}), ConfigError);
  EXPECT_THROW(fit_sigmoid({1, 2, 2, 4, 5}, {0, 0, 1, 1, 1}), ValidationError);
  EXPECT_THROW(fit_sigmoid({1, 2, 3, 4, 5}, {0, 0, 1, 1}), ValidationError);
}

TEST(NormalizeCurve, FivePointExample) {
  SigmoidFit fit;
  fit.a = 2;
  fit.b = 3;
  fit.c = 1;
  fit.k = 1;
  const auto n = normalize_curve(fit, {1, 2, 3, 4, 5});
  const std::vector<double> expected = {0, 0.19661193324148188, 0.5, 0.8033880667585183, 1};
  ASSERT_EQ(n.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(n[i], expected[i], 1e-12);
}

TEST(NormalizeCurve, BoundsAndFlatCurve) {
  SigmoidFit fit;
  fit.a = -0.5;
  fit.b = 10;
  fit.c = 0.2;
  fit.k = 0.3;
  std::vector<double> xs;
  for (int i = 0; i < 30; ++i) xs.push_back(i);
  const auto n = normalize_curve(fit, xs);
  EXPECT_DOUBLE_EQ(*std::min_element(n.begin(), n.end()), 0.0);
  EXPECT_DOUBLE_EQ(*std::max_element(n.begin(), n.end()), 1.0);
  fit.a = 0;
  EXPECT_THROW(normalize_curve(fit, xs), UndefinedScoreError);
}

TEST(StepAtFraction, Examples) {
  EXPECT_EQ(step_at_fraction({1000, 2000, 3000, 4000}, {0.1, 0.5, 0.96, 1.0}), 3000);
  EXPECT_EQ(step_at_fraction({1000, 2000, 3000}, {0.2, 0.19, 0.1}), 1000);
  EXPECT_EQ(step_at_fraction({1, 2, 3}, {0.5, 0.95, 1.0}, 0.95), 2);
  EXPECT_EQ(step_at_fraction({1, 2, 3}, {-2.0, -1.02, -1.0}), 2);
  EXPECT_THROW(step_at_fraction({}, {}), ValidationError);
}

TEST(StepAtFraction, Properties) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::int64_t> steps;
    std::vector<double> ys;
    for (int i = 0; i < 12; ++i) {
      steps.push_back(1000 * (i + 1));
      ys.push_back(u(rng));
    }
    const auto at = step_at_fraction(steps, ys);
    const auto argmax = steps[std::max_element(ys.begin(), ys.end()) - ys.begin()];
    EXPECT_LE(at, argmax);
    // Lower fractions can only move the answer earlier.
    EXPECT_LE(step_at_fraction(steps, ys, 0.5), at);
    EXPECT_EQ(step_at_fraction(steps, ys, 1.0), argmax);
  }
}

TEST(StepAtFraction, InvariantToPositiveScaling) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::int64_t> steps;
    std::vector<double> ys, scaled;
    const double factor = std::ldexp(1.0, trial % 9 - 4);
    for (int i = 0; i < 10; ++i) {
      steps.push_back(100 * (i + 1));
      ys.push_back(u(rng));
      scaled.push_back(factor * ys.back());
    }
    EXPECT_EQ(step_at_fraction(steps, scaled), step_at_fraction(steps, ys));
  }
}

TEST(StepAtFraction, SteeperCurvesReachThresholdNearerMidpoint) {
  std::vector<double> xs;
  std::vector<std::int64_t> steps;
  for (int i = 0; i <= 200; ++i) {
    xs.push_back(500.0 * i);
    steps.push_back(500 * i);
  }
  const double b = 5e4;
  std::int64_t previous = std::numeric_limits<std::int64_t>::max();
  for (double k : {5e-5, 1e-4, 2e-4, 4e-4, 8e-4}) {
    const auto at = step_at_fraction(steps, gen_sigmoid_series(1.0, b, 0.0, k, xs, 0.0, 0));
    EXPECT_GT(at, b);
    EXPECT_LE(at, previous);
    previous = at;
  }
}

TEST(FitSigmoid, RefitOfFittedCurveIsNoWorse) {
  std::vector<double> steps;
  for (int i = 1; i <= 12; ++i) steps.push_back(1000.0 * i);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto ys = gen_sigmoid_series(0.6, 6000, 0.1, 8e-4, steps, 0.02, seed);
    const auto fit = fit_sigmoid(steps, ys);
    std::vector<double> curve;
    for (double x : steps) curve.push_back(fit(x));
    const auto refit = fit_sigmoid(steps, curve);
    // Residual against the original data.
    double sq = 0;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      sq += (refit(steps[i]) - ys[i]) * (refit(steps[i]) - ys[i]);
    }
    EXPECT_LE(std::sqrt(sq / steps.size()), fit.residual_rmse + 1e-9);
  }
}

TEST(Summary, FitNeedsFiveCheckpoints) {
  std::vector<ProbeScore> s;
  for (std::int64_t step : {1000, 2000}) {
    for (int f = 0; f < 2; ++f) s.push_back(score(step, "L1", f, step / 4000.0));
  }
  const auto summary = summarize_trajectory("p", "m", s);
  EXPECT_FALSE(summary.fit.has_value());
  EXPECT_FALSE(summary.fit_error.empty());
  EXPECT_EQ(summary.step_at_95, 2000);
  EXPECT_EQ(summary.best_layers.size(), 2u);
}

TEST(Summary, FitsAndIgnoresOtherProbes) {
  std::vector<double> steps;
  for (int i = 1; i <= 8; ++i) steps.push_back(1000.0 * i);
  const auto ys = gen_sigmoid_series(0.5, 4000, 0.2, 2e-3, steps, 0.0, 0);
  std::vector<ProbeScore> s;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    s.push_back(score(static_cast<std::int64_t>(steps[i]), "L1", 0, ys[i]));
    s.push_back(score(static_cast<std::int64_t>(steps[i]), "L2", 0, ys[i] - 0.1));
    auto other = score(static_cast<std::int64_t>(steps[i]), "L1", 0, 5.0);
    other.probe_id = "q";
    s.push_back(other);
  }
  const auto summary = summarize_trajectory("p", "m", s);
  ASSERT_TRUE(summary.fit.has_value());
  EXPECT_NEAR(summary.fit->b, 4000, 1.0);
  for (const auto& p : summary.best_layers) EXPECT_EQ(p.layer_id, "L1");
}

}  // namespace
}  // namespace probekit
