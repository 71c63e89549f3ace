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

#include "probekit/clusterprobe.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

namespace probekit {

Matrix LdaProjection::project(const Matrix& points) const {
  if (points.cols() != mean.size()) {
    throw ValidationError("projection expects dim " + std::to_string(mean.size()) +
                          ", got " + std::to_string(points.cols()));
  }
  return (points.rowwise() - mean.transpose()) * basis;
}

LdaProjection fit_lda(const Matrix& points, const std::vector<std::string>& labels,
                      double shrinkage) {
  const Eigen::Index n = points.rows();
  const Eigen::Index dim = points.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw ValidationError("fit_lda: " + std::to_string(labels.size()) +
                          " labels for " + std::to_string(n) + " points");
  }
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) {
    throw ConfigError("fit_lda: shrinkage must lie in [0, 1]");
  }

  std::map<std::string, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < n; ++i) members[labels[i]].push_back(i);
  const auto n_classes = static_cast<Eigen::Index>(members.size());
  if (n_classes < 2) throw ConfigError("fit_lda: need at least two classes");
  for (const auto& [label, idx] : members) {
    if (idx.size() < 2) {
      throw ConfigError("fit_lda: class '" + label + "' has " +
                        std::to_string(idx.size()) + " training sample(s), need 2");
    }
  }
  if (n <= n_classes) {
    throw ConfigError("fit_lda: need more samples (" + std::to_string(n) +
                      ") than classes (" + std::to_string(n_classes) + ")");
  }
  if (n_classes - 1 > dim) {
    throw ConfigError("fit_lda: " + std::to_string(n_classes) +
                      " classes need at least " + std::to_string(n_classes - 1) +
                      " input dimensions, have " + std::to_string(dim));
  }

  LdaProjection out;
  out.mean = points.colwise().mean().transpose();

  Matrix centered(n, dim);
  Matrix between = Matrix::Zero(dim, dim);
  for (const auto& [label, idx] : members) {
    out.class_labels.push_back(label);
    Vector class_mean = Vector::Zero(dim);
    for (auto i : idx) class_mean += points.row(i).transpose();
    class_mean /= static_cast<double>(idx.size());
    for (auto i : idx) centered.row(i) = points.row(i) - class_mean.transpose();
    const Vector offset = class_mean - out.mean;
    between.noalias() += static_cast<double>(idx.size()) * offset * offset.transpose();
  }
  Matrix within = centered.transpose() * centered;
  if (!within.allFinite() || !between.allFinite()) {
    throw NumericError("fit_lda: non-finite scatter matrix");
  }

  const double trace = within.trace();
  if (!(trace > 0.0)) {
    throw NumericError("fit_lda: within-class scatter is zero");
  }
  Matrix regularized = (1.0 - shrinkage) * within;
  regularized.diagonal().array() += shrinkage * trace / static_cast<double>(dim);

  Eigen::LLT<Matrix> chol(regularized);
  if (chol.info() != Eigen::Success) {
    throw NumericError("fit_lda: regularized within-class scatter is not positive definite");
  }
  const auto lower = chol.matrixL();
  // whitened = L^-1 S_b L^-T
  Matrix tmp = lower.solve(between);
  Matrix whitened = lower.solve(tmp.transpose().eval()).transpose();
  whitened = 0.5 * (whitened + whitened.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Matrix> eig(whitened);
  if (eig.info() != Eigen::Success) {
    throw NumericError("fit_lda: eigensolver failed");
  }
  std::vector<Eigen::Index> order(dim);
  std::iota(order.begin(), order.end(), 0);
  const Vector& values = eig.eigenvalues();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (values(a) != values(b)) return values(a) > values(b);
    return a < b;
  });

  const Eigen::Index k = n_classes - 1;
  out.basis.resize(dim, k);
  out.eigenvalues.resize(k);
  const auto upper = chol.matrixU();
  for (Eigen::Index c = 0; c < k; ++c) {
    Vector direction = upper.solve(eig.eigenvectors().col(order[c]));
    Eigen::Index pivot = 0;
    direction.cwiseAbs().maxCoeff(&pivot);
    if (direction(pivot) < 0.0) direction = -direction;
    out.basis.col(c) = direction;
    out.eigenvalues(c) = values(order[c]);
  }
  if (!out.basis.allFinite()) throw NumericError("fit_lda: non-finite basis");
  return out;
}

double silhouette(const Matrix& points, const std::vector<int>& labels) {
  const Eigen::Index m = points.rows();
  if (static_cast<Eigen::Index>(labels.size()) != m) {
    throw ValidationError("silhouette: label count does not match point count");
  }
  std::map<int, int> remap;
  for (int label : labels) remap.emplace(label, 0);
  int next = 0;
  for (auto& [label, id] : remap) id = next++;
  const int n_clusters = next;
  if (n_clusters < 2) {
    throw UndefinedScoreError("silhouette: need at least two clusters, found " +
                              std::to_string(n_clusters));
  }
  std::vector<int> cluster(m);
  std::vector<int> sizes(n_clusters, 0);
  for (Eigen::Index i = 0; i < m; ++i) {
    cluster[i] = remap[labels[i]];
    ++sizes[cluster[i]];
  }

  // Pairwise distances, filled once per unordered pair.
  std::vector<double> sums(static_cast<std::size_t>(m) * n_clusters, 0.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double d = (points.row(i) - points.row(j)).norm();
      sums[i * n_clusters + cluster[j]] += d;
      sums[j * n_clusters + cluster[i]] += d;
    }
  }

  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const int own = cluster[i];
    if (sizes[own] == 1) continue;
    const double a = sums[i * n_clusters + own] / (sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_clusters; ++c) {
      if (c == own) continue;
      b = std::min(b, sums[i * n_clusters + c] / sizes[c]);
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(m);
}

double silhouette(const Matrix& points, const std::vector<std::string>& labels) {
  std::map<std::string, int> ids;
  std::vector<int> coded;
  coded.reserve(labels.size());
  for (const auto& label : labels) {
    auto [it, inserted] = ids.emplace(label, static_cast<int>(ids.size()));
    coded.push_back(it->second);
  }
  return silhouette(points, coded);
}

void ClusterProbeConfig::validate() const {
  if (n_categories < 2) throw ConfigError("cluster probe: n_categories must be >= 2");
  if (samples_per_category < 2) {
    throw ConfigError("cluster probe: samples_per_category must be >= 2");
  }
  if (!(train_fraction > 0.0 && test_fraction > 0.0) ||
      std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("cluster probe: train/test fractions must be positive and sum to 1");
  }
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) {
    throw ConfigError("cluster probe: shrinkage must lie in [0, 1]");
  }
}

const std::vector<std::string>& cluster_preset_names() {
  static const std::vector<std::string> names = {
      "phones", "syllable_forms", "syllable_types", "word_forms", "pos"};
  return names;
}

ClusterProbeConfig cluster_preset(std::string_view name) {
  ClusterProbeConfig c;
  if (name == "phones") {
    c.n_categories = 37;
    c.samples_per_category = 50;
  } else if (name == "syllable_forms") {
    c.n_categories = 100;
    c.samples_per_category = 20;
  } else if (name == "syllable_types") {
    c.n_categories = 20;
    c.samples_per_category = 100;
    c.disjoint_by = "syllable_form";
    c.forms_per_category = 5;
    c.samples_per_form = 20;
  } else if (name == "word_forms") {
    c.n_categories = 250;
    c.samples_per_category = 10;
  } else if (name == "pos") {
    c.n_categories = 4;
    c.samples_per_category = 150;
    c.disjoint_by = "word_form";
    c.forms_per_category = 50;
    c.samples_per_form = 3;
  } else {
    throw ConfigError("unknown cluster preset '" + std::string(name) + "'");
  }
  return c;
}

std::vector<FoldSplit> make_cluster_folds(const std::vector<LabeledUnit>& units,
                                          bool use_disjointness, int n_folds,
                                          std::uint64_t seed) {
  if (n_folds < 2) throw ConfigError("need at least two folds");
  std::map<std::string, std::vector<int>> by_class;
  for (std::size_t i = 0; i < units.size(); ++i) {
    by_class[units[i].label].push_back(static_cast<int>(i));
  }

  std::mt19937_64 rng(seed);
  std::vector<int> fold_of(units.size(), -1);
  auto block_of = [n_folds](std::size_t pos, std::size_t total) {
    // Position pos falls in block f when floor(f*total/K) <= pos < floor((f+1)*total/K).
    for (int f = 0; f < n_folds; ++f) {
      if (pos < (static_cast<std::size_t>(f) + 1) * total / n_folds) return f;
    }
    return n_folds - 1;
  };

  if (!use_disjointness) {
    for (auto& [label, idx] : by_class) {
      std::vector<int> order = idx;
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t p = 0; p < order.size(); ++p) {
        fold_of[order[p]] = block_of(p, order.size());
      }
    }
  } else {
    const double max_share = 1.0 - 1.0 / n_folds;
    std::unordered_map<std::string, int> key_fold;
    for (auto& [label, idx] : by_class) {
      std::vector<std::string> keys;
      std::map<std::string, int> counts;
      for (int i : idx) {
        const auto& key = units[i].disjointness_key;
        if (key.empty()) {
          throw ConfigError("unit " + units[i].unit_id + " has no disjointness key");
        }
        if (counts[key]++ == 0) keys.push_back(key);
      }
      for (const auto& [key, count] : counts) {
        if (count > max_share * static_cast<double>(idx.size())) {
          throw ConfigError("disjointness key '" + key + "' covers " +
                            std::to_string(count) + " of " +
                            std::to_string(idx.size()) + " samples of class '" +
                            label + "'; the split cannot keep it out of training");
        }
      }
      std::vector<std::string> fresh;
      for (const auto& key : keys) {
        if (!key_fold.contains(key)) fresh.push_back(key);
      }
      std::shuffle(fresh.begin(), fresh.end(), rng);
      for (std::size_t p = 0; p < fresh.size(); ++p) {
        key_fold[fresh[p]] = block_of(p, fresh.size());
      }
    }
    for (std::size_t i = 0; i < units.size(); ++i) {
      fold_of[i] = key_fold.at(units[i].disjointness_key);
    }
  }

  std::vector<FoldSplit> folds(n_folds);
  for (std::size_t i = 0; i < units.size(); ++i) {
    for (int f = 0; f < n_folds; ++f) {
      (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(static_cast<int>(i));
    }
  }
  return folds;
}

std::vector<FoldScore> run_cluster_probe(const std::vector<LabeledUnit>& units,
                                         const ClusterProbeConfig& config,
                                         std::uint64_t seed, int n_folds) {
  config.validate();
  if (units.empty()) throw ConfigError("cluster probe: no units");
  const Eigen::Index dim = units.front().vector.size();
  for (const auto& u : units) {
    if (u.vector.size() != dim) {
      throw ValidationError("cluster probe: unit " + u.unit_id + " has dim " +
                            std::to_string(u.vector.size()) + ", expected " +
                            std::to_string(dim));
    }
  }

  const auto folds = make_cluster_folds(units, config.disjoint_by.has_value(),
                                        n_folds, seed);
  auto gather = [&](const std::vector<int>& idx, Matrix& x,
                    std::vector<std::string>& y) {
    x.resize(static_cast<Eigen::Index>(idx.size()), dim);
    y.clear();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      x.row(static_cast<Eigen::Index>(r)) = units[idx[r]].vector.transpose();
      y.push_back(units[idx[r]].label);
    }
  };

  std::vector<FoldScore> out;
  for (int f = 0; f < n_folds; ++f) {
    Matrix train_x, test_x;
    std::vector<std::string> train_y, test_y;
    gather(folds[f].train, train_x, train_y);
    gather(folds[f].test, test_x, test_y);
    const LdaProjection lda = fit_lda(train_x, train_y, config.shrinkage);
    out.push_back({f, silhouette(lda.project(test_x), test_y)});
  }
  return out;
}

}  // namespace probekit
