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

#include "probekit/synthgen.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "probekit/trajectory.h"

namespace probekit {

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix out(rows, cols);
  // Row-by-row fill keeps the draw order independent of storage order.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = normal(rng);
  }
  return out;
}

std::string padded(const char* prefix, int value, int width = 3) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*d", prefix, width, value);
  return buf;
}

}  // namespace

Matrix simplex_vertices(int n, int dim, double separation) {
  if (n < 2) throw ConfigError("simplex needs at least two vertices");
  if (dim < n - 1) {
    throw ConfigError("a " + std::to_string(n) + "-vertex simplex needs dim >= " +
                      std::to_string(n - 1));
  }
  // Vertex i is (separation / sqrt 2) e_i, expressed in the Helmert basis of
  // the hyperplane orthogonal to the all-ones vector.
  Matrix out = Matrix::Zero(n, dim);
  const double scale = separation / std::sqrt(2.0);
  for (int k = 1; k < n; ++k) {
    const double norm = std::sqrt(static_cast<double>(k) * (k + 1));
    for (int i = 0; i < k; ++i) out(i, k - 1) = scale / norm;
    out(k, k - 1) = -scale * k / norm;
  }
  return out;
}

LabeledPoints gen_clusters(int n_classes, int per_class, int dim, double separation,
                           std::uint64_t seed, double noise_sd) {
  if (n_classes < 2) throw ConfigError("gen_clusters: need at least two classes");
  if (per_class < 1) throw ConfigError("gen_clusters: per_class must be >= 1");
  const Matrix means = simplex_vertices(n_classes, dim, separation);
  std::mt19937_64 rng(seed);
  LabeledPoints out;
  out.points = gaussian(static_cast<Eigen::Index>(n_classes) * per_class, dim, rng, noise_sd);
  for (int c = 0; c < n_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      out.points.row(static_cast<Eigen::Index>(c) * per_class + i) += means.row(c);
      out.labels.push_back(padded("c", c));
    }
  }
  return out;
}

RsaPair gen_rsa_pair(int n_units, int model_dim, int reference_dim, double signal,
                     std::uint64_t seed) {
  if (n_units < 3) throw ConfigError("gen_rsa_pair: need at least three units");
  std::mt19937_64 rng(seed);
  RsaPair out;
  out.reference = gaussian(n_units, reference_dim, rng);
  out.reference.array() += 1.0;
  const Matrix mixing = gaussian(reference_dim, model_dim, rng) / std::sqrt(reference_dim);
  out.model = signal * (out.reference * mixing) + gaussian(n_units, model_dim, rng);
  for (int i = 0; i < n_units; ++i) out.ids.push_back(padded("u", i, 5));
  return out;
}

AbxSet gen_abx_set(int n_triplets, int dim, double meaning_strength, std::uint64_t seed) {
  if (n_triplets < 1) throw ConfigError("gen_abx_set: need at least one triplet");
  std::mt19937_64 rng(seed);
  AbxSet out;
  for (int t = 0; t < n_triplets; ++t) {
    const Vector phonetic = gaussian(dim, 1, rng);
    const Vector meaning_a = gaussian(dim, 1, rng);
    const Vector meaning_b = gaussian(dim, 1, rng);
    AbxTriplet trip;
    trip.triplet_id = padded("t", t, 5);
    trip.a_id = trip.triplet_id + "_a";
    trip.b_id = trip.triplet_id + "_b";
    trip.x_id = trip.triplet_id + "_x";
    trip.phonetic_key = padded("p", t, 5);
    trip.a_meaning_key = trip.phonetic_key + "_m0";
    trip.b_meaning_key = trip.phonetic_key + "_m1";
    out.embeddings[trip.a_id] = phonetic + meaning_strength * meaning_a + gaussian(dim, 1, rng);
    out.embeddings[trip.x_id] = phonetic + meaning_strength * meaning_a + gaussian(dim, 1, rng);
    out.embeddings[trip.b_id] = phonetic + meaning_strength * meaning_b + gaussian(dim, 1, rng);
    out.triplets.push_back(std::move(trip));
  }
  return out;
}

EdgeList prufer_decode(const std::vector<int>& sequence) {
  const int n = static_cast<int>(sequence.size()) + 2;
  std::vector<int> degree(n, 1);
  for (int v : sequence) {
    if (v < 0 || v >= n) throw ValidationError("prufer_decode: label out of range");
    ++degree[v];
  }
  EdgeList edges;
  std::set<int> leaves;
  for (int v = 0; v < n; ++v) {
    if (degree[v] == 1) leaves.insert(v);
  }
  for (int v : sequence) {
    const int leaf = *leaves.begin();
    leaves.erase(leaves.begin());
    edges.emplace_back(std::min(leaf, v), std::max(leaf, v));
    if (--degree[v] == 1) leaves.insert(v);
  }
  const int u = *leaves.begin();
  const int w = *std::next(leaves.begin());
  edges.emplace_back(u, w);
  std::sort(edges.begin(), edges.end());
  return edges;
}

EdgeList random_tree(int n, std::mt19937_64& rng) {
  if (n < 2) throw ConfigError("random_tree: need at least two nodes");
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> sequence(n - 2);
  for (int& v : sequence) v = pick(rng);
  return prufer_decode(sequence);
}

Matrix mds_embed_tree(int n, const EdgeList& edges, int dim) {
  if (dim < n - 1) {
    throw ConfigError("mds_embed_tree: dim " + std::to_string(dim) + " < n - 1 = " +
                      std::to_string(n - 1));
  }
  const Eigen::MatrixXi dist = tree_distances(n, edges);
  const Matrix squared = dist.cast<double>();
  const Matrix centering =
      Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
  const Matrix gram = -0.5 * centering * squared * centering;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("mds_embed_tree: eigensolver failed");

  const Vector& values = eig.eigenvalues();  // ascending
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  Matrix out = Matrix::Zero(n, dim);
  int col = 0;
  for (int e = n - 1; e >= 0; --e) {
    const double lambda = values(e);
    if (lambda < -1e-8 * scale) {
      throw NumericError("mds_embed_tree: tree metric produced a negative eigenvalue");
    }
    if (lambda <= 1e-12 * scale) continue;
    if (col >= dim) throw NumericError("mds_embed_tree: embedding rank exceeds dim");
    out.col(col++) = eig.eigenvectors().col(e) * std::sqrt(lambda);
  }
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double err = std::abs((out.row(i) - out.row(j)).squaredNorm() - dist(i, j));
      if (err > 1e-8) {
        throw NumericError("mds_embed_tree: reconstruction error " + format_double(err));
      }
    }
  }
  return out;
}

namespace {

std::vector<SentenceInstance> gen_corpus(int n_sentences, int min_len, int max_len, int dim,
                                         std::uint64_t seed, bool mds) {
  if (n_sentences < 1) throw ConfigError("tree corpus: need at least one sentence");
  if (min_len < 2 || max_len < min_len) {
    throw ConfigError("tree corpus: need 2 <= min_len <= max_len");
  }
  if (mds && dim < max_len) {
    throw ConfigError("tree corpus: dim must be >= max sentence length");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> length(min_len, max_len);
  std::vector<SentenceInstance> out;
  for (int s = 0; s < n_sentences; ++s) {
    const int n = length(rng);
    EdgeList edges = random_tree(n, rng);
    Matrix emb = mds ? mds_embed_tree(n, edges, dim) : gaussian(n, dim, rng);
    out.push_back(make_sentence(padded("s", s, 5), std::move(emb), std::move(edges)));
  }
  return out;
}

}  // namespace

std::vector<SentenceInstance> gen_tree_corpus(int n_sentences, int min_len, int max_len,
                                              int dim, std::uint64_t seed) {
  return gen_corpus(n_sentences, min_len, max_len, dim, seed, true);
}

std::vector<SentenceInstance> gen_random_corpus(int n_sentences, int min_len, int max_len,
                                                int dim, std::uint64_t seed) {
  return gen_corpus(n_sentences, min_len, max_len, dim, seed, false);
}

std::vector<double> gen_sigmoid_series(double a, double b, double c, double k,
                                       const std::vector<double>& steps, double noise_sd,
                                       std::uint64_t seed) {
  if (steps.empty()) throw ConfigError("gen_sigmoid_series: no steps");
  if (noise_sd < 0.0) throw ConfigError("gen_sigmoid_series: noise_sd must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> out;
  out.reserve(steps.size());
  for (double x : steps) {
    const double eps = noise(rng);
    out.push_back(sigmoid(x, a, b, c, k) + noise_sd * eps);
  }
  return out;
}

double SynthSpec::get(const std::string& name, double fallback) const {
  auto it = params.find(name);
  return it == params.end() ? fallback : it->second;
}

SynthKind parse_synth_kind(const std::string& name) {
  if (name == "clusters") return SynthKind::kClusters;
  if (name == "rsa_pair") return SynthKind::kRsaPair;
  if (name == "abx_set") return SynthKind::kAbxSet;
  if (name == "tree_corpus") return SynthKind::kTreeCorpus;
  if (name == "sigmoid_series") return SynthKind::kSigmoidSeries;
  throw ConfigError("unknown synth kind '" + name + "'");
}

std::string synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::kClusters: return "clusters";
    case SynthKind::kRsaPair: return "rsa_pair";
    case SynthKind::kAbxSet: return "abx_set";
    case SynthKind::kTreeCorpus: return "tree_corpus";
    case SynthKind::kSigmoidSeries: return "sigmoid_series";
  }
  return "unknown";
}

std::vector<fs::path> write_synth(const SynthSpec& spec, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  auto as_int = [&](const char* name, double fallback) {
    return static_cast<int>(std::lround(spec.get(name, fallback)));
  };
  switch (spec.kind) {
    case SynthKind::kClusters: {
      const auto data = gen_clusters(as_int("n_classes", 4), as_int("per_class", 20),
                                     as_int("dim", 8), spec.get("separation", 5.0), spec.seed,
                                     spec.get("noise_sd", 1.0));
      FeatureTable table;
      table.values = data.points;
      std::string labels = "unit_id,label\n";
      for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
        table.ids.push_back(padded("u", static_cast<int>(i), 5));
        labels += table.ids.back() + "," + data.labels[i] + "\n";
      }
      write_feature_table(table, out_dir / "points.emb");
      write_text_atomic(out_dir / "labels.csv", labels);
      written = {out_dir / "points.emb", feature_ids_path(out_dir / "points.emb"),
                 out_dir / "labels.csv"};
      break;
    }
    case SynthKind::kRsaPair: {
      const auto pair = gen_rsa_pair(as_int("n_units", 100), as_int("model_dim", 16),
                                     as_int("reference_dim", 8), spec.get("signal", 1.0),
                                     spec.seed);
      write_feature_table({pair.ids, pair.model}, out_dir / "model.emb");
      write_feature_table({pair.ids, pair.reference}, out_dir / "reference.emb");
      written = {out_dir / "model.emb", out_dir / "reference.emb"};
      break;
    }
    case SynthKind::kAbxSet: {
      const auto set = gen_abx_set(as_int("n_triplets", 200), as_int("dim", 16),
                                   spec.get("meaning_strength", 1.0), spec.seed);
      write_triplets(set.triplets, out_dir / "triplets.csv");
      FeatureTable table;
      std::vector<std::string> ids;
      for (const auto& [id, vec] : set.embeddings) ids.push_back(id);
      std::sort(ids.begin(), ids.end());
      table.values.resize(static_cast<Eigen::Index>(ids.size()), as_int("dim", 16));
      for (std::size_t i = 0; i < ids.size(); ++i) {
        table.values.row(static_cast<Eigen::Index>(i)) = set.embeddings.at(ids[i]).transpose();
      }
      table.ids = ids;
      write_feature_table(table, out_dir / "embeddings.emb");
      written = {out_dir / "triplets.csv", out_dir / "embeddings.emb"};
      break;
    }
    case SynthKind::kTreeCorpus: {
      const auto corpus = gen_tree_corpus(as_int("n_sentences", 50), as_int("min_len", 4),
                                          as_int("max_len", 12), as_int("dim", 16), spec.seed);
      std::vector<ParseRecord> parses;
      FeatureTable table;
      std::vector<Vector> rows;
      for (const auto& s : corpus) {
        ParseRecord rec;
        rec.sentence_id = s.sentence_id;
        rec.edges = s.gold_edges;
        for (int w = 0; w < s.size(); ++w) {
          rec.words.push_back(s.sentence_id + "_w" + std::to_string(w));
          table.ids.push_back(rec.words.back());
          rows.push_back(s.embeddings.row(w).transpose());
        }
        parses.push_back(std::move(rec));
      }
      table.values.resize(static_cast<Eigen::Index>(rows.size()), as_int("dim", 16));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        table.values.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
      }
      write_parses(parses, out_dir / "parses.jsonl");
      write_feature_table(table, out_dir / "embeddings.emb");
      written = {out_dir / "parses.jsonl", out_dir / "embeddings.emb"};
      break;
    }
    case SynthKind::kSigmoidSeries: {
      const int n = as_int("n_steps", 20);
      const double first = spec.get("first_step", 1000.0);
      const double last = spec.get("last_step", 100000.0);
      std::vector<double> steps;
      for (int i = 0; i < n; ++i) {
        steps.push_back(std::round(first + (last - first) * i / std::max(1, n - 1)));
      }
      const auto ys = gen_sigmoid_series(spec.get("a", 1.0), spec.get("b", 50000.0),
                                         spec.get("c", 0.0), spec.get("k", 1e-4), steps,
                                         spec.get("noise_sd", 0.0), spec.seed);
      std::string csv = "step,score\n";
      for (int i = 0; i < n; ++i) {
        csv += std::to_string(static_cast<std::int64_t>(steps[i])) + "," +
               format_double(ys[i]) + "\n";
      }
      write_text_atomic(out_dir / "series.csv", csv);
      written = {out_dir / "series.csv"};
      break;
    }
  }
  return written;
}

}  // namespace probekit
