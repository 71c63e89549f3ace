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
#include <string_view>
#include <vector>

#include "probekit/common.h"

namespace probekit {

inline constexpr double kDefaultLdaShrinkage = 0.1;

// Fisher discriminant subspace for N classes: N-1 directions.
struct LdaProjection {
  Vector mean;
  Matrix basis;  // dim x (N - 1)
  std::vector<std::string> class_labels;
  Vector eigenvalues;  // descending, one per basis column

  int n_directions() const { return static_cast<int>(basis.cols()); }
  // Projects each row x of `points` to basis^T (x - mean).
  Matrix project(const Matrix& points) const;
};

// Solves S_b v = lambda S_w v after shrinking S_w toward a scaled identity:
//   S_w' = (1 - shrinkage) S_w + shrinkage * trace(S_w) / dim * I.
// The problem is whitened with the Cholesky factor of S_w' and handed to a
// symmetric eigensolver. Eigenvalues are ordered descending (ties by index),
// and each direction's largest-magnitude component is made positive.
LdaProjection fit_lda(const Matrix& points, const std::vector<std::string>& labels,
                      double shrinkage = kDefaultLdaShrinkage);

// Mean silhouette over Euclidean distances. Points in singleton clusters
// contribute 0. Throws UndefinedScoreError with fewer than two clusters.
double silhouette(const Matrix& points, const std::vector<std::string>& labels);
double silhouette(const Matrix& points, const std::vector<int>& labels);

struct ClusterProbeConfig {
  int n_categories = 2;
  int samples_per_category = 2;
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  // Annotation column whose values must not be shared between the train and
  // test side of any fold (e.g. word form for part-of-speech clustering).
  std::optional<std::string> disjoint_by;
  // Preset-only bookkeeping used by validation.
  std::optional<int> forms_per_category;
  std::optional<int> samples_per_form;
  double shrinkage = kDefaultLdaShrinkage;

  void validate() const;
};

// Dataset designs: phones, syllable_forms, syllable_types, word_forms, pos.
ClusterProbeConfig cluster_preset(std::string_view name);
const std::vector<std::string>& cluster_preset_names();

struct LabeledUnit {
  std::string unit_id;
  Vector vector;
  std::string label;
  std::string disjointness_key;  // empty when no disjointness is requested
};

struct FoldSplit {
  std::vector<int> train;
  std::vector<int> test;
};

// Stratified folds. Without disjointness each class is shuffled and cut into
// n_folds contiguous blocks, block f being fold f's test set. With
// disjointness the same is done over each class's keys, so every unit of a
// key lands on the same side of every split.
std::vector<FoldSplit> make_cluster_folds(const std::vector<LabeledUnit>& units,
                                          bool use_disjointness, int n_folds,
                                          std::uint64_t seed);

std::vector<FoldScore> run_cluster_probe(const std::vector<LabeledUnit>& units,
                                         const ClusterProbeConfig& config,
                                         std::uint64_t seed, int n_folds = 5);

}  // namespace probekit
