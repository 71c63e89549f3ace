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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "probekit/common.h"

namespace probekit {

// Symmetric cosine-dissimilarity matrix with zero diagonal.
struct DissimilarityMatrix {
  std::vector<std::string> ids;
  Matrix values;

  int size() const { return static_cast<int>(ids.size()); }
};

// values[i][j] = 1 - cos(x_i, x_j), clamped to [0, 2].
DissimilarityMatrix cosine_dissim(const Matrix& rows,
                                  const std::vector<std::string>& ids);

// Pair mask: true marks a usable (i, j) pair. Only the strict upper
// triangle is read; set both (i, j) and (j, i) to keep the mask symmetric.
using PairMask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

PairMask full_mask(int n);

struct PairCorrelation {
  double r = 0.0;
  long n_pairs = 0;
};

// Pearson correlation over the unmasked strict upper triangle.
PairCorrelation rsa_correlation(const DissimilarityMatrix& model,
                                const DissimilarityMatrix& reference,
                                const PairMask& mask);
double rsa_score(const DissimilarityMatrix& model,
                 const DissimilarityMatrix& reference, const PairMask& mask);
double rsa_score(const DissimilarityMatrix& model,
                 const DissimilarityMatrix& reference);

struct RsaConfig {
  // Correlations are computed within each value of this column, then averaged
  // weighted by usable pair count.
  std::optional<std::string> group_by;
  // Pairs sharing a value of this column are excluded.
  std::optional<std::string> exclude_same;
  double subsample_fraction = 0.8;
};

// Design used for the semantic alignment dataset: per-POS word-form counts.
struct RsaPreset {
  std::string name;
  std::optional<int> total_samples;
  std::optional<int> dims;
  std::map<std::string, int> forms_per_group;
  RsaConfig config;
};

RsaPreset rsa_preset(const std::string& name);  // "acoustic" or "semantic"

struct RsaUnit {
  std::string unit_id;
  Vector vector;
  std::map<std::string, std::string> labels;
};

// Per fold: seeded subsample of the shared units, both spaces' matrices on
// that subsample, group/exclusion masks, pair-weighted mean r. Groups with
// fewer than three usable pairs are dropped and reported through `warnings`.
std::vector<FoldScore> run_rsa_probe(const std::vector<RsaUnit>& model_units,
                                     const std::vector<RsaUnit>& reference_units,
                                     const RsaConfig& config, std::uint64_t seed,
                                     int n_folds = 5,
                                     std::vector<std::string>* warnings = nullptr);

}  // namespace probekit
