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
#include <random>
#include <string>
#include <vector>

#include "probekit/abx.h"
#include "probekit/common.h"
#include "probekit/structprobe.h"

namespace probekit {

// Ground-truth generators for every probe. Each is a pure function of its
// arguments and seed.

struct LabeledPoints {
  Matrix points;
  std::vector<std::string> labels;
};

// n vertices of a regular simplex with the given edge length, embedded in the
// first n-1 coordinates of a dim-dimensional space (Helmert basis).
Matrix simplex_vertices(int n, int dim, double separation);

// Class means on a simplex plus isotropic Gaussian noise. Rows are grouped by
// class; labels are "c000", "c001", ...
LabeledPoints gen_clusters(int n_classes, int per_class, int dim, double separation,
                           std::uint64_t seed, double noise_sd = 1.0);

struct RsaPair {
  std::vector<std::string> ids;
  Matrix model;
  Matrix reference;
};

// Reference vectors are N(0, I) plus a positive offset; model vectors are a
// random linear image of them scaled by `signal` plus unit noise. signal = 0
// gives independent spaces.
RsaPair gen_rsa_pair(int n_units, int model_dim, int reference_dim, double signal,
                     std::uint64_t seed);

struct AbxSet {
  std::vector<AbxTriplet> triplets;
  EmbeddingLookup embeddings;
};

// Each triplet shares a phonetic vector; A and X add the same meaning vector
// scaled by `meaning_strength`, B a different one.
AbxSet gen_abx_set(int n_triplets, int dim, double meaning_strength, std::uint64_t seed);

// Labeled tree from a Pruefer sequence over n nodes.
EdgeList prufer_decode(const std::vector<int>& sequence);
EdgeList random_tree(int n, std::mt19937_64& rng);

// Classical MDS of the tree metric: rows whose squared Euclidean distances
// equal the path lengths, occupying the first n-1 of `dim` columns.
// Throws NumericError when the reconstruction misses by more than 1e-8.
Matrix mds_embed_tree(int n, const EdgeList& edges, int dim);

// Uniform random trees with MDS embeddings (structural-probe oracle).
std::vector<SentenceInstance> gen_tree_corpus(int n_sentences, int min_len, int max_len,
                                              int dim, std::uint64_t seed);

// Same tree distribution, embeddings i.i.d. N(0, I) and unrelated to the trees.
std::vector<SentenceInstance> gen_random_corpus(int n_sentences, int min_len, int max_len,
                                                int dim, std::uint64_t seed);

std::vector<double> gen_sigmoid_series(double a, double b, double c, double k,
                                       const std::vector<double>& steps, double noise_sd,
                                       std::uint64_t seed);

enum class SynthKind { kClusters, kRsaPair, kAbxSet, kTreeCorpus, kSigmoidSeries };

struct SynthSpec {
  SynthKind kind = SynthKind::kClusters;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  double get(const std::string& name, double fallback) const;
};

SynthKind parse_synth_kind(const std::string& name);
std::string synth_kind_name(SynthKind kind);

// Writes the generated data in the on-disk formats under `out_dir` and
// returns the list of files written.
std::vector<fs::path> write_synth(const SynthSpec& spec, const fs::path& out_dir);

}  // namespace probekit
