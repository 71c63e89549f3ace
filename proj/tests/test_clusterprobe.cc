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

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "probekit/clusterprobe.h"
#include "probekit/synthgen.h"
#include "test_util.h"

namespace probekit {
namespace {

std::vector<std::string> shuffled(std::vector<std::string> labels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

// Direct transcription of the definition, one point at a time.
double brute_silhouette(const Matrix& x, const std::vector<int>& y) {
  const int m = static_cast<int>(x.rows());
  std::set<int> clusters(y.begin(), y.end());
  double total = 0;
  for (int i = 0; i < m; ++i) {
    int own_size = 0;
    double own = 0;
    for (int j = 0; j < m; ++j) {
      if (y[j] == y[i]) ++own_size;
      if (j != i && y[j] == y[i]) own += (x.row(i) - x.row(j)).norm();
    }
    if (own_size == 1) continue;
    const double a = own / (own_size - 1);
    double b = 1e300;
    for (int c : clusters) {
      if (c == y[i]) continue;
      double sum = 0;
      int count = 0;
      for (int j = 0; j < m; ++j) {
        if (y[j] == c) {
          sum += (x.row(i) - x.row(j)).norm();
          ++count;
        }
      }
      b = std::min(b, sum / count);
    }
    if (std::max(a, b) > 0) total += (b - a) / std::max(a, b);
  }
  return total / m;
}

TEST(FitLda, TwoClassesGiveOneDirection) {
  std::mt19937_64 rng(1);
  Matrix x = testing::random_matrix(10, 3, rng);
  x.bottomRows(5).array() += 4.0;
  const auto lda = fit_lda(x, {"a", "a", "a", "a", "a", "b", "b", "b", "b", "b"});
  EXPECT_EQ(lda.n_directions(), 1);
  EXPECT_EQ(lda.basis.rows(), 3);
  EXPECT_EQ(lda.class_labels, (std::vector<std::string>{"a", "b"}));
}

TEST(FitLda, PhonePresetGives36Directions) {
  const auto data = gen_clusters(37, 50, 64, 3.0, 7);
  const auto lda = fit_lda(data.points, data.labels);
  EXPECT_EQ(lda.n_directions(), 36);
  EXPECT_TRUE(lda.basis.allFinite());
  EXPECT_EQ(lda.project(data.points).cols(), 36);
}

TEST(FitLda, MatchesReferenceGeneralizedEigensolver) {
  // Eigenpairs of S_b v = lambda S_w' v from a separate dense solver
  // (normalized v^T S_w' v = 1, largest component positive).
  Matrix x(12, 2);
  x << 0, 0, 1, 0, 0, 1, 1, 1.5, 4, 1, 5, 1, 4, 2, 5.5, 2.5, 1, 5, 2, 6, 1, 6, 0.5, 4;
  std::vector<std::string> y;
  for (const char* c : {"a", "b", "c"}) y.insert(y.end(), 4, c);
  const auto lda = fit_lda(x, y, 0.1);
  ASSERT_EQ(lda.n_directions(), 2);
  EXPECT_NEAR(lda.eigenvalues(0), 18.25914251138903, 1e-10);
  EXPECT_NEAR(lda.eigenvalues(1), 5.063432510104391, 1e-10);
  Matrix expected(2, 2);
  expected << 0.4906790252021978, 0.2555758270213821, -0.3582462554060393, 0.27323184533320455;
  EXPECT_NEAR((lda.basis - expected).cwiseAbs().maxCoeff(), 0.0, 1e-10);
}

TEST(FitLda, SolvesRegularizedGeneralizedProblem) {
  const auto data = gen_clusters(5, 20, 8, 3.0, 3);
  const auto lda = fit_lda(data.points, data.labels, 0.1);
  const Matrix& x = data.points;
  const Vector mu = x.colwise().mean().transpose();
  Matrix sb = Matrix::Zero(8, 8), sw = Matrix::Zero(8, 8);
  for (int c = 0; c < 5; ++c) {
    const Matrix block = x.middleRows(c * 20, 20);
    const Vector mc = block.colwise().mean().transpose();
    sb += 20.0 * (mc - mu) * (mc - mu).transpose();
    const Matrix centered = block.rowwise() - mc.transpose();
    sw += centered.transpose() * centered;
  }
  const Matrix swr = 0.9 * sw + 0.1 * sw.trace() / 8.0 * Matrix::Identity(8, 8);
  for (int k = 0; k < lda.n_directions(); ++k) {
    const Vector v = lda.basis.col(k);
    const Vector lhs = sb * v;
    const Vector rhs = lda.eigenvalues(k) * swr * v;
    EXPECT_LT((lhs - rhs).norm(), 1e-9 * (1.0 + lhs.norm()));
    if (k > 0) {
      EXPECT_GE(lda.eigenvalues(k - 1), lda.eigenvalues(k));
    }
  }
}

TEST(FitLda, OneDimensionalSeparatedClasses) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0.0, 0.1);
  Matrix x(40, 1);
  std::vector<std::string> y;
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = (i < 20 ? 0.0 : 10.0) + noise(rng);
    y.push_back(i < 20 ? "lo" : "hi");
  }
  const auto lda = fit_lda(x, y);
  const Matrix p = lda.project(x);
  const double gap = std::abs(p.topRows(20).mean() - p.bottomRows(20).mean());
  const double spread =
      std::max((p.topRows(20).array() - p.topRows(20).mean()).abs().maxCoeff(),
               (p.bottomRows(20).array() - p.bottomRows(20).mean()).abs().maxCoeff());
  EXPECT_GT(gap, 20.0 * spread);
  EXPECT_GT(silhouette(p, y), 0.9);
}

TEST(FitLda, Errors) {
  Matrix x = Matrix::Random(5, 3);
  EXPECT_THROW(fit_lda(x, {"a", "a", "a", "a", "b"}), ConfigError);
  EXPECT_THROW(fit_lda(x, {"a", "a", "a", "a", "a"}), ConfigError);
  EXPECT_THROW(fit_lda(Matrix::Random(6, 1), {"a", "a", "b", "b", "c", "c"}), ConfigError);
  Matrix same = Matrix::Ones(6, 2);
  EXPECT_THROW(fit_lda(same, {"a", "a", "a", "b", "b", "b"}), NumericError);
  Matrix inf = Matrix::Random(6, 2);
  inf(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(fit_lda(inf, {"a", "a", "a", "b", "b", "b"}), NumericError);
}

TEST(Silhouette, CoincidentClustersScoreOne) {
  Matrix x(4, 2);
  x << 0, 0, 0, 0, 10, 10, 10, 10;
  EXPECT_DOUBLE_EQ(silhouette(x, std::vector<int>{0, 0, 1, 1}), 1.0);
}

TEST(Silhouette, FivePointReferenceValue) {
  Matrix x(5, 2);
  x << 0, 0, 1, 0, 0, 2, 5, 5, 6, 4;
  const std::vector<int> y = {0, 0, 0, 1, 1};
  // Reference implementation value.
  EXPECT_NEAR(silhouette(x, y), 0.7512426230727961, 1e-14);
  EXPECT_NEAR(silhouette(x, y), brute_silhouette(x, y), 1e-14);
}

TEST(Silhouette, MatchesBruteForceOnRandomData) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix x = testing::random_matrix(25, 3, rng);
    std::vector<int> y(25);
    for (auto& v : y) v = label(rng);
    y[0] = 0;
    y[1] = 1;
    EXPECT_NEAR(silhouette(x, y), brute_silhouette(x, y), 1e-12);
  }
}

TEST(Silhouette, ShuffledLabelsNearZero) {
  const auto data = gen_clusters(4, 100, 8, 0.0, 5);
  EXPECT_LT(std::abs(silhouette(data.points, shuffled(data.labels, 1))), 0.05);
}

TEST(Silhouette, SingletonsScoreZeroAndOneClusterIsUndefined) {
  Matrix x(3, 1);
  x << 0, 1, 5;
  // Point 2 is alone; points 0 and 1: a = 1, b = 5 and 4.
  const double expected = ((5.0 - 1.0) / 5.0 + (4.0 - 1.0) / 4.0) / 3.0;
  EXPECT_NEAR(silhouette(x, std::vector<int>{0, 0, 1}), expected, 1e-15);
  EXPECT_THROW(silhouette(x, std::vector<int>{2, 2, 2}), UndefinedScoreError);
}

TEST(Silhouette, InvariantToRotationTranslationScaling) {
  std::mt19937_64 rng(12);
  const auto data = gen_clusters(3, 15, 4, 2.0, 9);
  const double base = silhouette(data.points, data.labels);
  const Matrix q = testing::random_rotation(4, rng);
  Matrix moved = (data.points * q) * 3.5;
  moved.rowwise() += Eigen::RowVector4d(1, -2, 3, 100);
  EXPECT_NEAR(silhouette(moved, data.labels), base, 1e-12);
}

TEST(Silhouette, DuplicatedPointsFollowClosedForm) {
  // Duplicating every point keeps b and scales a by 2(n-1)/(2n-1) for a
  // cluster of size n, so the score is not preserved exactly.
  const auto data = gen_clusters(3, 6, 2, 2.0, 4);
  const Matrix& x = data.points;
  const int m = static_cast<int>(x.rows());
  Matrix doubled(2 * m, x.cols());
  doubled << x, x;
  std::vector<std::string> labels = data.labels;
  labels.insert(labels.end(), data.labels.begin(), data.labels.end());

  double expected = 0;
  for (int i = 0; i < m; ++i) {
    double own = 0;
    std::map<std::string, std::pair<double, int>> other;
    int n = 0;
    for (int j = 0; j < m; ++j) {
      const double d = (x.row(i) - x.row(j)).norm();
      if (data.labels[j] == data.labels[i]) {
        own += d;
        ++n;
      } else {
        other[data.labels[j]].first += d;
        ++other[data.labels[j]].second;
      }
    }
    const double a = 2.0 * own / (2.0 * n - 1.0);
    double b = 1e300;
    for (const auto& [label, sum] : other) b = std::min(b, sum.first / sum.second);
    expected += (b - a) / std::max(a, b);
  }
  expected /= m;
  EXPECT_NEAR(silhouette(doubled, labels), expected, 1e-12);

  // Clusters whose points coincide are the case where duplication is exact.
  Matrix tight(4, 2);
  tight << 0, 0, 0, 0, 3, 4, 3, 4;
  Matrix tight2(8, 2);
  tight2 << tight, tight;
  EXPECT_DOUBLE_EQ(silhouette(tight, std::vector<int>{0, 0, 1, 1}),
                   silhouette(tight2, std::vector<int>{0, 0, 1, 1, 0, 0, 1, 1}));
}

TEST(Lda, BeatsRandomProjectionOnSeparableData) {
  // Anisotropic noise: large variance along directions that carry no class
  // information, so an uninformed projection mixes the classes.
  int wins = 0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    auto data = gen_clusters(4, 30, 10, 6.0, seed, 0.3);
    Matrix stretch = Matrix::Identity(10, 10);
    for (int d = 3; d < 10; ++d) stretch(d, d) = 8.0;
    const Matrix rot = testing::random_rotation(10, rng);
    const Matrix x = data.points * stretch * rot;
    const auto lda = fit_lda(x, data.labels);
    const double lda_score = silhouette(lda.project(x), data.labels);
    Eigen::HouseholderQR<Matrix> qr(testing::random_matrix(10, 3, rng));
    const Matrix basis = qr.householderQ() * Matrix::Identity(10, 3);
    const double random_score = silhouette(x * basis, data.labels);
    if (lda_score >= random_score) ++wins;
  }
  EXPECT_EQ(wins, 20);
}

std::vector<LabeledUnit> units_from(const LabeledPoints& data, int forms_per_class = 0) {
  std::vector<LabeledUnit> units;
  std::map<std::string, int> seen;
  for (int i = 0; i < data.points.rows(); ++i) {
    LabeledUnit u;
    u.unit_id = "u" + std::to_string(i);
    u.vector = data.points.row(i).transpose();
    u.label = data.labels[i];
    if (forms_per_class > 0) {
      u.disjointness_key = u.label + "_f" + std::to_string(seen[u.label]++ % forms_per_class);
    }
    units.push_back(std::move(u));
  }
  return units;
}

TEST(ClusterFolds, StratifiedAndComplete) {
  const auto units = units_from(gen_clusters(3, 10, 2, 1.0, 1));
  const auto folds = make_cluster_folds(units, false, 5, 42);
  ASSERT_EQ(folds.size(), 5u);
  std::vector<int> seen(units.size(), 0);
  for (const auto& f : folds) {
    EXPECT_EQ(f.test.size(), 6u);
    EXPECT_EQ(f.train.size(), 24u);
    std::map<std::string, int> per_class;
    for (int i : f.test) {
      ++seen[i];
      ++per_class[units[i].label];
    }
    for (const auto& [label, count] : per_class) EXPECT_EQ(count, 2);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(make_cluster_folds(units, false, 5, 42)[2].test, folds[2].test);
}

TEST(ClusterFolds, DisjointKeysNeverStraddle) {
  const auto units = units_from(gen_clusters(4, 150, 4, 1.0, 2), 50);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto folds = make_cluster_folds(units, true, 5, seed);
    for (const auto& f : folds) {
      std::set<std::string> train_keys, test_keys;
      for (int i : f.train) train_keys.insert(units[i].disjointness_key);
      for (int i : f.test) test_keys.insert(units[i].disjointness_key);
      for (const auto& k : test_keys) EXPECT_FALSE(train_keys.contains(k)) << k;
      EXPECT_EQ(f.test.size(), 120u);
    }
  }
}

TEST(ClusterFolds, KeyCoveringMostOfClassIsUnsatisfiable) {
  auto units = units_from(gen_clusters(2, 10, 2, 1.0, 3), 5);
  for (int i = 0; i < 9; ++i) units[i].disjointness_key = "big";
  EXPECT_THROW(make_cluster_folds(units, true, 5, 0), ConfigError);
}

TEST(ClusterProbe, PosDesignGivesFiveScores) {
  auto config = cluster_preset("pos");
  const auto units = units_from(gen_clusters(4, 150, 6, 4.0, 6), 50);
  const auto scores = run_cluster_probe(units, config, 17);
  ASSERT_EQ(scores.size(), 5u);
  for (int f = 0; f < 5; ++f) {
    EXPECT_EQ(scores[f].fold, f);
    EXPECT_GT(scores[f].score, 0.3);
  }
  EXPECT_EQ(run_cluster_probe(units, config, 17), scores);
}

TEST(ClusterProbe, IdenticalDistributionsScoreNearZero) {
  ClusterProbeConfig config;
  config.n_categories = 4;
  config.samples_per_category = 100;
  double total = 0;
  int count = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto units = units_from(gen_clusters(4, 100, 10, 0.0, seed));
    for (const auto& f : run_cluster_probe(units, config, seed)) {
      total += f.score;
      ++count;
    }
  }
  // b is a minimum over the other classes, so unstructured data scores
  // slightly below zero on small test folds.
  EXPECT_LT(total / count, 0.02);
  EXPECT_GT(total / count, -0.12);
}

TEST(ClusterConfig, PresetsAndValidation) {
  EXPECT_EQ(cluster_preset("phones").n_categories, 37);
  EXPECT_EQ(cluster_preset("phones").samples_per_category, 50);
  EXPECT_EQ(cluster_preset("syllable_forms").n_categories, 100);
  EXPECT_EQ(cluster_preset("syllable_types").forms_per_category, 5);
  EXPECT_EQ(cluster_preset("word_forms").n_categories, 250);
  EXPECT_EQ(cluster_preset("pos").disjoint_by, "word_form");
  EXPECT_EQ(cluster_preset_names().size(), 5u);
  EXPECT_THROW(cluster_preset("tones"), ConfigError);
  ClusterProbeConfig bad;
  bad.train_fraction = 0.7;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ClusterProbeConfig{};
  bad.n_categories = 1;
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace probekit
