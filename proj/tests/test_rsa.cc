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

#include <random>

#include "probekit/rsa.h"
#include "probekit/synthgen.h"
#include "test_util.h"

namespace probekit {
namespace {

DissimilarityMatrix from_upper(const std::vector<double>& upper, int n) {
  DissimilarityMatrix d;
  d.values = Matrix::Zero(n, n);
  int k = 0;
  for (int i = 0; i < n; ++i) {
    d.ids.push_back("u" + std::to_string(i));
    for (int j = i + 1; j < n; ++j) d.values(i, j) = d.values(j, i) = upper[k++];
  }
  return d;
}

std::vector<std::string> ids_for(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("u" + std::to_string(i));
  return ids;
}

TEST(CosineDissim, IdenticalOrthogonalAntipodal) {
  Matrix x(4, 2);
  x << 1, 0, 2, 0, 0, 3, -1, 0;
  const auto d = cosine_dissim(x, ids_for(4));
  EXPECT_DOUBLE_EQ(d.values(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(d.values(0, 2), 1.0);
  EXPECT_DOUBLE_EQ(d.values(0, 3), 2.0);
  EXPECT_EQ(d.values.diagonal(), Vector::Zero(4));
  EXPECT_EQ(d.values, d.values.transpose());
}

TEST(CosineDissim, ZeroRowNamesUnit) {
  Matrix x(3, 2);
  x << 1, 0, 0, 0, 1, 1;
  try {
    cosine_dissim(x, {"a", "silent", "c"});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("silent"), std::string::npos);
  }
}

TEST(CosineDissim, EntriesBounded) {
  std::mt19937_64 rng(1);
  const auto d = cosine_dissim(testing::random_matrix(50, 3, rng), ids_for(50));
  EXPECT_GE(d.values.minCoeff(), 0.0);
  EXPECT_LE(d.values.maxCoeff(), 2.0);
}

TEST(RsaScore, FourUnitReferenceValue) {
  const auto model = from_upper({.1, .4, .9, .3, .7, .2}, 4);
  const auto ref = from_upper({.2, .5, .6, .1, .8, .4}, 4);
  EXPECT_NEAR(rsa_score(model, ref), 0.7636550360499869, 1e-14);
}

TEST(RsaScore, SelfAndAffine) {
  std::mt19937_64 rng(2);
  const auto m = cosine_dissim(testing::random_matrix(30, 5, rng), ids_for(30));
  EXPECT_EQ(rsa_score(m, m), 1.0);
  auto affine = m;
  affine.values = (3.0 * m.values.array() + 0.7).matrix();
  affine.values.diagonal().setZero();
  EXPECT_NEAR(rsa_score(m, affine), 1.0, 1e-12);
}

TEST(RsaScore, AffineInvarianceAgainstReference) {
  std::mt19937_64 rng(3);
  const auto m = cosine_dissim(testing::random_matrix(20, 4, rng), ids_for(20));
  const auto r = cosine_dissim(testing::random_matrix(20, 4, rng), ids_for(20));
  const double base = rsa_score(m, r);
  auto r2 = r;
  r2.values = (0.25 * r.values.array() + 5.0).matrix();
  EXPECT_NEAR(rsa_score(m, r2), base, 1e-12);
}

TEST(RsaScore, MaskSymmetryAndDiagonal) {
  std::mt19937_64 rng(4);
  const auto m = cosine_dissim(testing::random_matrix(12, 4, rng), ids_for(12));
  const auto r = cosine_dissim(testing::random_matrix(12, 4, rng), ids_for(12));
  PairMask upper = full_mask(12), lower = full_mask(12);
  upper(2, 7) = false;
  lower(7, 2) = false;
  const auto a = rsa_correlation(m, r, upper);
  EXPECT_EQ(a.n_pairs, 65);
  PairMask both = full_mask(12);
  both(2, 7) = both(7, 2) = false;
  EXPECT_EQ(rsa_correlation(m, r, both).r, a.r);
  EXPECT_EQ(rsa_correlation(m, r, lower).n_pairs, 66);
  PairMask diag = full_mask(12);
  diag(3, 3) = false;
  EXPECT_EQ(rsa_correlation(m, r, diag).n_pairs, 66);
}

TEST(RsaScore, PermutationInvariant) {
  std::mt19937_64 rng(5);
  const Matrix xm = testing::random_matrix(15, 4, rng);
  const Matrix xr = testing::random_matrix(15, 6, rng);
  const double base = rsa_score(cosine_dissim(xm, ids_for(15)), cosine_dissim(xr, ids_for(15)));
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(15);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 15, rng);
  EXPECT_NEAR(rsa_score(cosine_dissim(perm * xm, ids_for(15)),
                        cosine_dissim(perm * xr, ids_for(15))),
              base, 1e-12);
}

TEST(RsaScore, UndefinedCases) {
  const auto flat = from_upper({.5, .5, .5}, 3);
  const auto vary = from_upper({.1, .2, .3}, 3);
  EXPECT_THROW(rsa_score(flat, vary), UndefinedScoreError);
  PairMask mask = full_mask(3);
  mask(0, 1) = false;
  EXPECT_THROW(rsa_score(vary, vary, mask), UndefinedScoreError);
}

std::vector<RsaUnit> units_of(const Matrix& x, const std::vector<std::map<std::string, std::string>>& labels = {}) {
  std::vector<RsaUnit> out;
  for (int i = 0; i < x.rows(); ++i) {
    out.push_back({"u" + std::to_string(i), x.row(i).transpose(),
                   labels.empty() ? std::map<std::string, std::string>{} : labels[i]});
  }
  return out;
}

TEST(RsaProbe, CopyScoresOneEveryFold) {
  std::mt19937_64 rng(6);
  const auto units = units_of(testing::random_matrix(40, 5, rng));
  const auto folds = run_rsa_probe(units, units, {}, 9);
  ASSERT_EQ(folds.size(), 5u);
  for (const auto& f : folds) EXPECT_NEAR(f.score, 1.0, 1e-12);
}

TEST(RsaProbe, IndependentReferenceNearZero) {
  double total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto pair = gen_rsa_pair(500, 16, 12, 0.0, seed);
    const auto folds = run_rsa_probe(units_of(pair.model), units_of(pair.reference), {}, seed);
    for (const auto& f : folds) total += f.score;
  }
  EXPECT_LT(std::abs(total / 25), 0.05);
}

TEST(RsaProbe, PlantedSignalIsDetected) {
  const auto pair = gen_rsa_pair(200, 16, 12, 3.0, 4);
  for (const auto& f : run_rsa_probe(units_of(pair.model), units_of(pair.reference), {}, 1)) {
    EXPECT_GT(f.score, 0.3);
  }
}

TEST(RsaProbe, GroupingAndExclusionMatchManualComputation) {
  std::mt19937_64 rng(7);
  const int n = 24;
  const Matrix xm = testing::random_matrix(n, 4, rng);
  const Matrix xr = testing::random_matrix(n, 4, rng);
  std::vector<std::map<std::string, std::string>> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i]["pos"] = i < 14 ? "NOUN" : "VERB";
    labels[i]["word_form"] = "w" + std::to_string(i / 2);
  }
  RsaConfig config;
  config.group_by = "pos";
  config.exclude_same = "word_form";
  config.subsample_fraction = 1.0;
  const auto folds = run_rsa_probe(units_of(xm, labels), units_of(xr, labels), config, 3, 2);

  // All units are used, so every fold equals the manual value.
  double weighted = 0;
  long pairs = 0;
  for (const auto& [lo, hi] : std::vector<std::pair<int, int>>{{0, 14}, {14, 24}}) {
    const int m = hi - lo;
    const auto dm = cosine_dissim(xm.middleRows(lo, m), ids_for(m));
    const auto dr = cosine_dissim(xr.middleRows(lo, m), ids_for(m));
    PairMask mask = full_mask(m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) {
        if ((lo + i) / 2 == (lo + j) / 2) mask(i, j) = false;
      }
    }
    const auto c = rsa_correlation(dm, dr, mask);
    weighted += c.r * c.n_pairs;
    pairs += c.n_pairs;
  }
  for (const auto& f : folds) EXPECT_NEAR(f.score, weighted / pairs, 1e-12);
}

TEST(RsaProbe, SmallGroupDroppedWithWarning) {
  std::mt19937_64 rng(8);
  const Matrix x = testing::random_matrix(12, 4, rng);
  const Matrix r = testing::random_matrix(12, 4, rng);
  std::vector<std::map<std::string, std::string>> labels(12);
  for (int i = 0; i < 12; ++i) labels[i]["pos"] = i < 10 ? "NOUN" : "ADV";
  RsaConfig config;
  config.group_by = "pos";
  config.subsample_fraction = 1.0;
  std::vector<std::string> warnings;
  const auto folds = run_rsa_probe(units_of(x, labels), units_of(r, labels), config, 1, 1, &warnings);
  ASSERT_EQ(folds.size(), 1u);
  EXPECT_FALSE(warnings.empty());
  const auto dm = cosine_dissim(x.topRows(10), ids_for(10));
  const auto dr = cosine_dissim(r.topRows(10), ids_for(10));
  EXPECT_NEAR(folds[0].score, rsa_score(dm, dr), 1e-12);

  std::vector<std::map<std::string, std::string>> singles(12);
  for (int i = 0; i < 12; ++i) singles[i]["pos"] = "g" + std::to_string(i / 2);
  EXPECT_THROW(run_rsa_probe(units_of(x, singles), units_of(r, singles), config, 1, 1),
               UndefinedScoreError);
}

TEST(RsaPreset, SemanticDesign) {
  const auto p = rsa_preset("semantic");
  EXPECT_EQ(p.total_samples, 1000);
  EXPECT_EQ(p.dims, 300);
  EXPECT_EQ(p.forms_per_group.at("NOUN"), 60);
  EXPECT_EQ(p.forms_per_group.at("ADV"), 20);
  EXPECT_EQ(p.forms_per_group.at("ADJ"), 20);
  EXPECT_EQ(p.forms_per_group.at("VERB"), 20);
  EXPECT_EQ(p.config.group_by, "pos");
  EXPECT_EQ(p.config.exclude_same, "word_form");
  EXPECT_EQ(rsa_preset("acoustic").dims, 20);
  EXPECT_THROW(rsa_preset("prosody"), ConfigError);
}

}  // namespace
}  // namespace probekit
