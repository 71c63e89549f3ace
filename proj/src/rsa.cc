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

#include "probekit/rsa.h"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace probekit {

DissimilarityMatrix cosine_dissim(const Matrix& rows,
                                  const std::vector<std::string>& ids) {
  const Eigen::Index m = rows.rows();
  if (static_cast<Eigen::Index>(ids.size()) != m) {
    throw ValidationError("cosine_dissim: id count does not match row count");
  }
  Matrix unit = rows;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double norm = rows.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw NumericError("cosine_dissim: zero-norm vector for unit '" + ids[i] + "'");
    }
    unit.row(i) /= norm;
  }
  DissimilarityMatrix out;
  out.ids = ids;
  out.values = Matrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      const double d = std::clamp(1.0 - unit.row(i).dot(unit.row(j)), 0.0, 2.0);
      out.values(i, j) = d;
      out.values(j, i) = d;
    }
  }
  return out;
}

PairMask full_mask(int n) { return PairMask::Constant(n, n, true); }

PairCorrelation rsa_correlation(const DissimilarityMatrix& model,
                                const DissimilarityMatrix& reference,
                                const PairMask& mask) {
  const int m = model.size();
  if (model.ids != reference.ids) {
    throw ValidationError("rsa_score: model and reference ids differ");
  }
  if (mask.rows() != m || mask.cols() != m) {
    throw ValidationError("rsa_score: mask shape does not match");
  }
  // Two passes: means, then centered moments.
  long count = 0;
  double sum_x = 0.0;
  double sum_y = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      if (!mask(i, j)) continue;
      ++count;
      sum_x += model.values(i, j);
      sum_y += reference.values(i, j);
    }
  }
  if (count < 3) {
    throw UndefinedScoreError("rsa_score: only " + std::to_string(count) +
                              " usable pairs, need 3");
  }
  const double mean_x = sum_x / static_cast<double>(count);
  const double mean_y = sum_y / static_cast<double>(count);
  double sxx = 0.0;
  double syy = 0.0;
  double sxy = 0.0;
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      if (!mask(i, j)) continue;
      const double dx = model.values(i, j) - mean_x;
      const double dy = reference.values(i, j) - mean_y;
      sxx += dx * dx;
      syy += dy * dy;
      sxy += dx * dy;
    }
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) {
    throw UndefinedScoreError("rsa_score: zero variance in a dissimilarity matrix");
  }
  const double r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return {r, count};
}

double rsa_score(const DissimilarityMatrix& model,
                 const DissimilarityMatrix& reference, const PairMask& mask) {
  return rsa_correlation(model, reference, mask).r;
}

double rsa_score(const DissimilarityMatrix& model,
                 const DissimilarityMatrix& reference) {
  return rsa_score(model, reference, full_mask(model.size()));
}

RsaPreset rsa_preset(const std::string& name) {
  RsaPreset p;
  p.name = name;
  if (name == "acoustic") {
    p.total_samples = 1850;
    p.dims = 20;
  } else if (name == "semantic") {
    p.total_samples = 1000;
    p.dims = 300;
    p.forms_per_group = {{"NOUN", 60}, {"ADV", 20}, {"ADJ", 20}, {"VERB", 20}};
    p.config.group_by = "pos";
    p.config.exclude_same = "word_form";
  } else {
    throw ConfigError("unknown RSA preset '" + name + "'");
  }
  return p;
}

namespace {

const std::string* find_label(const RsaUnit& unit, const std::string& column) {
  auto it = unit.labels.find(column);
  return it == unit.labels.end() ? nullptr : &it->second;
}

}  // namespace

std::vector<FoldScore> run_rsa_probe(const std::vector<RsaUnit>& model_units,
                                     const std::vector<RsaUnit>& reference_units,
                                     const RsaConfig& config, std::uint64_t seed,
                                     int n_folds, std::vector<std::string>* warnings) {
  if (n_folds < 1) throw ConfigError("rsa: need at least one fold");
  if (!(config.subsample_fraction > 0.0 && config.subsample_fraction <= 1.0)) {
    throw ConfigError("rsa: subsample_fraction must lie in (0, 1]");
  }
  std::unordered_map<std::string, const RsaUnit*> reference;
  for (const auto& u : reference_units) reference.emplace(u.unit_id, &u);

  // Shared units, in model order.
  std::vector<const RsaUnit*> model_shared;
  std::vector<const RsaUnit*> ref_shared;
  for (const auto& u : model_units) {
    auto it = reference.find(u.unit_id);
    if (it == reference.end()) continue;
    model_shared.push_back(&u);
    ref_shared.push_back(it->second);
  }
  const int n = static_cast<int>(model_shared.size());
  if (n < 3) {
    throw ConfigError("rsa: only " + std::to_string(n) +
                      " units shared between model and reference spaces");
  }
  auto column_of = [&](const RsaUnit& u, const std::string& column) -> const std::string& {
    const std::string* v = find_label(u, column);
    if (v == nullptr) {
      throw ValidationError("rsa: unit " + u.unit_id + " has no label '" + column + "'");
    }
    return *v;
  };

  const int take = std::max(3, static_cast<int>(std::floor(config.subsample_fraction * n)));
  std::vector<FoldScore> out;
  for (int fold = 0; fold < n_folds; ++fold) {
    const auto chosen = subsample_indices(n, std::min(take, n), derive_seed(seed, fold));

    std::map<std::string, std::vector<int>> groups;
    for (int idx : chosen) {
      const std::string key =
          config.group_by ? column_of(*model_shared[idx], *config.group_by) : "";
      groups[key].push_back(idx);
    }

    double weighted = 0.0;
    long total_pairs = 0;
    for (const auto& [group, idx] : groups) {
      const int m = static_cast<int>(idx.size());
      Matrix model_rows(m, model_shared.front()->vector.size());
      Matrix ref_rows(m, ref_shared.front()->vector.size());
      std::vector<std::string> ids;
      for (int r = 0; r < m; ++r) {
        const auto& mu = *model_shared[idx[r]];
        const auto& ru = *ref_shared[idx[r]];
        if (mu.vector.size() != model_rows.cols() || ru.vector.size() != ref_rows.cols()) {
          throw ValidationError("rsa: inconsistent vector dimension at unit " + mu.unit_id);
        }
        model_rows.row(r) = mu.vector.transpose();
        ref_rows.row(r) = ru.vector.transpose();
        ids.push_back(mu.unit_id);
      }
      PairMask mask = full_mask(m);
      if (config.exclude_same) {
        for (int i = 0; i < m; ++i) {
          for (int j = i + 1; j < m; ++j) {
            if (column_of(*model_shared[idx[i]], *config.exclude_same) ==
                column_of(*model_shared[idx[j]], *config.exclude_same)) {
              mask(i, j) = false;
              mask(j, i) = false;
            }
          }
        }
      }
      long usable = 0;
      for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) usable += mask(i, j) ? 1 : 0;
      }
      if (usable < 3) {
        if (warnings) {
          warnings->push_back("fold " + std::to_string(fold) + ": group '" + group +
                              "' dropped (" + std::to_string(usable) +
                              " usable pairs)");
        }
        continue;
      }
      const auto corr = rsa_correlation(cosine_dissim(model_rows, ids),
                                        cosine_dissim(ref_rows, ids), mask);
      weighted += corr.r * static_cast<double>(corr.n_pairs);
      total_pairs += corr.n_pairs;
    }
    if (total_pairs == 0) {
      throw UndefinedScoreError("rsa: every group was dropped in fold " +
                                std::to_string(fold));
    }
    out.push_back({fold, weighted / static_cast<double>(total_pairs)});
  }
  return out;
}

}  // namespace probekit
