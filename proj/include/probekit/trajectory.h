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

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "probekit/common.h"
#include "probekit/dataio.h"

namespace probekit {

struct BestLayerPoint {
  std::int64_t step = 0;
  std::string layer_id;
  double score = 0.0;  // mean over folds
};

// Per step: mean over folds for every layer, then the maximum over layers.
// Ties go to the layer listed first in `layer_order` (first appearance in
// `scores` when empty). All scores must belong to one (probe, model).
std::vector<BestLayerPoint> best_layer_scores(
    const std::vector<ProbeScore>& scores,
    const std::vector<std::string>& layer_order = {});

// f(x) = a / (1 + exp(-k (x - b))) + c
struct SigmoidFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double k = 0.0;
  double residual_rmse = 0.0;

  double operator()(double x) const;
};

double sigmoid(double x, double a, double b, double c, double k);

// Damped Gauss-Newton (Levenberg-Marquardt) least squares on a normalized
// problem, started from a grid of initial guesses; the lowest-residual fit
// wins. Requires at least 5 points with strictly increasing steps.
SigmoidFit fit_sigmoid(const std::vector<double>& steps, const std::vector<double>& scores);

// (f(x) - min) / (max - min) over the given steps.
std::vector<double> normalize_curve(const SigmoidFit& fit, const std::vector<double>& steps);

// Smallest observed step whose score reaches `fraction` of the maximum
// observed score. For a negative maximum the threshold is
// max - (1 - fraction) * |max| so the maximum itself always qualifies.
std::int64_t step_at_fraction(const std::vector<std::int64_t>& steps,
                              const std::vector<double>& scores, double fraction = 0.95);

struct TrajectorySummary {
  std::string probe_id;
  std::string model_id;
  std::vector<BestLayerPoint> best_layers;
  std::optional<SigmoidFit> fit;
  std::string fit_error;  // set when fit is absent
  std::int64_t step_at_95 = 0;
};

TrajectorySummary summarize_trajectory(const std::string& probe_id,
                                       const std::string& model_id,
                                       const std::vector<ProbeScore>& scores,
                                       const std::vector<std::string>& layer_order = {});

}  // namespace probekit
