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

#include "probekit/trajectory.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>

namespace probekit {

std::vector<BestLayerPoint> best_layer_scores(const std::vector<ProbeScore>& scores,
                                              const std::vector<std::string>& layer_order) {
  if (scores.empty()) throw ValidationError("best_layer_scores: no scores");
  const auto& first = scores.front();
  std::vector<std::string> order = layer_order;
  for (const auto& s : scores) {
    if (s.probe_id != first.probe_id || s.model_id != first.model_id) {
      throw ValidationError("best_layer_scores: mixed probes or models (" + s.probe_id +
                            "/" + s.model_id + " vs " + first.probe_id + "/" +
                            first.model_id + ")");
    }
    if (std::find(order.begin(), order.end(), s.layer_id) == order.end()) {
      order.push_back(s.layer_id);
    }
  }

  struct Sum {
    double total = 0.0;
    int count = 0;
  };
  std::map<std::int64_t, std::map<std::string, Sum>> table;
  for (const auto& s : scores) {
    auto& cell = table[s.step][s.layer_id];
    cell.total += s.score;
    ++cell.count;
  }

  std::vector<BestLayerPoint> out;
  for (const auto& [step, layers] : table) {
    BestLayerPoint best;
    best.step = step;
    bool found = false;
    for (const auto& layer : order) {
      auto it = layers.find(layer);
      if (it == layers.end()) continue;
      const double mean = it->second.total / it->second.count;
      if (!found || mean > best.score) {
        best.layer_id = layer;
        best.score = mean;
        found = true;
      }
    }
    out.push_back(best);
  }
  return out;
}

double sigmoid(double x, double a, double b, double c, double k) {
  return a / (1.0 + std::exp(-k * (x - b))) + c;
}

double SigmoidFit::operator()(double x) const { return sigmoid(x, a, b, c, k); }

namespace {

struct Params {
  std::array<double, 4> p;  // amplitude, midpoint, offset, steepness
};

double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double cost_of(const Params& q, const std::vector<double>& u, const std::vector<double>& v) {
  double cost = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double r = q.p[0] * logistic(q.p[3] * (u[i] - q.p[1])) + q.p[2] - v[i];
    cost += r * r;
  }
  return cost;
}

// Returns nullopt when the iteration leaves the finite domain.
std::optional<Params> levenberg_marquardt(Params q, const std::vector<double>& u,
                                          const std::vector<double>& v) {
  const std::size_t n = u.size();
  Eigen::Matrix<double, Eigen::Dynamic, 4> jac(n, 4);
  Eigen::VectorXd resid(n);
  double cost = cost_of(q, u, v);
  if (!std::isfinite(cost)) return std::nullopt;
  double lambda = -1.0;

  for (int iter = 0; iter < 2000 && cost > 1e-30; ++iter) {
    const double amp = q.p[0];
    const double mid = q.p[1];
    const double steep = q.p[3];
    for (std::size_t i = 0; i < n; ++i) {
      const double s = logistic(steep * (u[i] - mid));
      const double ds = s * (1.0 - s);
      jac(i, 0) = s;
      jac(i, 1) = -amp * ds * steep;
      jac(i, 2) = 1.0;
      jac(i, 3) = amp * ds * (u[i] - mid);
      resid(i) = amp * s + q.p[2] - v[i];
    }
    const Eigen::Matrix4d jtj = jac.transpose() * jac;
    const Eigen::Vector4d jtr = jac.transpose() * resid;
    const double diag_max = jtj.diagonal().maxCoeff();
    if (lambda < 0.0) lambda = 1e-3 * diag_max;

    bool accepted = false;
    bool converged = false;
    while (!accepted) {
      Eigen::Matrix4d damped = jtj;
      for (int d = 0; d < 4; ++d) {
        damped(d, d) += lambda * std::max(jtj(d, d), 1e-12 * diag_max + 1e-300);
      }
      const Eigen::Vector4d delta = damped.ldlt().solve(-jtr);
      if (!delta.allFinite()) return std::nullopt;
      Params trial = q;
      for (int d = 0; d < 4; ++d) trial.p[d] += delta(d);
      const double trial_cost = cost_of(trial, u, v);
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        const double gain = cost - trial_cost;
        const double step_norm = delta.norm();
        double param_norm = 0.0;
        for (double x : trial.p) param_norm += x * x;
        q = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-20);
        accepted = true;
        if (gain <= 1e-16 * cost || step_norm <= 1e-14 * (std::sqrt(param_norm) + 1e-14)) {
          converged = true;
        }
      } else {
        lambda *= 4.0;
        if (lambda > 1e20 * (diag_max + 1.0)) {
          converged = true;
          break;
        }
      }
    }
    if (converged) break;
  }
  for (double x : q.p) {
    if (!std::isfinite(x)) return std::nullopt;
  }
  return q;
}

double quantile(std::vector<double> values, double fraction) {
  std::sort(values.begin(), values.end());
  const double pos = fraction * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace

SigmoidFit fit_sigmoid(const std::vector<double>& steps, const std::vector<double>& scores) {
  const std::size_t n = steps.size();
  if (n != scores.size()) throw ValidationError("fit_sigmoid: steps and scores differ in length");
  if (n < 5) {
    throw ConfigError("fit_sigmoid: need at least 5 points, have " + std::to_string(n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(steps[i]) || !std::isfinite(scores[i])) {
      throw ValidationError("fit_sigmoid: non-finite input");
    }
    if (i > 0 && !(steps[i] > steps[i - 1])) {
      throw ValidationError("fit_sigmoid: steps must be strictly increasing");
    }
  }

  // Work on the unit square; a midpoint near 5e4 and a steepness near 1e-4
  // would otherwise leave the normal equations badly scaled.
  const double x0 = steps.front();
  const double x_range = steps.back() - steps.front();
  const auto [y_min_it, y_max_it] = std::minmax_element(scores.begin(), scores.end());
  const double y0 = *y_min_it;
  const double y_spread = *y_max_it - *y_min_it;
  const double y_range = y_spread > 0.0 ? y_spread : 1.0;
  std::vector<double> u(n), v(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = (steps[i] - x0) / x_range;
    v[i] = (scores[i] - y0) / y_range;
  }

  const double amp0 = y_spread > 0.0 ? 1.0 : 0.0;
  std::optional<Params> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (double mid_q : {0.25, 0.5, 0.75}) {
    const double mid0 = quantile(u, mid_q);
    for (double steep0 : {10.0, 1.0, 0.1}) {
      auto fitted = levenberg_marquardt(Params{{amp0, mid0, 0.0, steep0}}, u, v);
      if (!fitted) continue;
      const double cost = cost_of(*fitted, u, v);
      if (cost < best_cost) {
        best_cost = cost;
        best = fitted;
      }
    }
  }
  if (!best) {
    throw FitError("fit_sigmoid: every start diverged", std::numeric_limits<double>::infinity());
  }

  SigmoidFit fit;
  fit.a = best->p[0] * y_range;
  fit.b = best->p[1] * x_range + x0;
  fit.c = best->p[2] * y_range + y0;
  fit.k = best->p[3] / x_range;
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = fit(steps[i]) - scores[i];
    sq += r * r;
  }
  fit.residual_rmse = std::sqrt(sq / static_cast<double>(n));
  if (!std::isfinite(fit.residual_rmse)) {
    throw FitError("fit_sigmoid: non-finite residual", best_cost);
  }
  return fit;
}

std::vector<double> normalize_curve(const SigmoidFit& fit, const std::vector<double>& steps) {
  if (steps.empty()) throw ValidationError("normalize_curve: no steps");
  std::vector<double> values;
  values.reserve(steps.size());
  for (double x : steps) values.push_back(fit(x));
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double min = *lo;
  const double max = *hi;
  if (!(max - min > 1e-12 * std::max(1.0, std::abs(max)))) {
    throw UndefinedScoreError("normalize_curve: fitted curve is flat over the step range");
  }
  for (double& y : values) y = std::clamp((y - min) / (max - min), 0.0, 1.0);
  return values;
}

std::int64_t step_at_fraction(const std::vector<std::int64_t>& steps,
                              const std::vector<double>& scores, double fraction) {
  if (steps.empty() || steps.size() != scores.size()) {
    throw ValidationError("step_at_fraction: need equally many steps and scores (>= 1)");
  }
  const double max = *std::max_element(scores.begin(), scores.end());
  const double threshold = max - (1.0 - fraction) * std::abs(max);
  std::optional<std::int64_t> best;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (scores[i] >= threshold && (!best || steps[i] < *best)) best = steps[i];
  }
  return *best;
}

TrajectorySummary summarize_trajectory(const std::string& probe_id,
                                       const std::string& model_id,
                                       const std::vector<ProbeScore>& scores,
                                       const std::vector<std::string>& layer_order) {
  std::vector<ProbeScore> mine;
  for (const auto& s : scores) {
    if (s.probe_id == probe_id && s.model_id == model_id) mine.push_back(s);
  }
  TrajectorySummary out;
  out.probe_id = probe_id;
  out.model_id = model_id;
  out.best_layers = best_layer_scores(mine, layer_order);

  std::vector<std::int64_t> steps;
  std::vector<double> xs, ys;
  for (const auto& p : out.best_layers) {
    steps.push_back(p.step);
    xs.push_back(static_cast<double>(p.step));
    ys.push_back(p.score);
  }
  out.step_at_95 = step_at_fraction(steps, ys, 0.95);
  try {
    out.fit = fit_sigmoid(xs, ys);
  } catch (const Error& e) {
    out.fit_error = e.what();
  }
  return out;
}

}  // namespace probekit
