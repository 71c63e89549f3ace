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
#include <string>
#include <utility>
#include <vector>

#include "probekit/common.h"

namespace probekit {

using Edge = std::pair<int, int>;
using EdgeList = std::vector<Edge>;

// Linear map B (rank x dim); squared distances are measured after applying it.
struct ProbeMatrix {
  Matrix b;

  int rank() const { return static_cast<int>(b.rows()); }
  int dim() const { return static_cast<int>(b.cols()); }
};

struct SentenceInstance {
  std::string sentence_id;
  Matrix embeddings;  // n x dim, one row per word
  EdgeList gold_edges;
  Eigen::MatrixXi tree_dist;

  int size() const { return static_cast<int>(embeddings.rows()); }
};

// Path lengths between all node pairs of a tree (BFS from every node).
Eigen::MatrixXi tree_distances(int n, const EdgeList& edges);

// Validates the tree (n >= 2) and fills tree_dist.
SentenceInstance make_sentence(std::string sentence_id, Matrix embeddings,
                               EdgeList gold_edges);

// ||B (h_i - h_j)||^2
double probe_distance(const ProbeMatrix& probe, const Vector& h_i, const Vector& h_j);
Matrix probe_distances(const ProbeMatrix& probe, const Matrix& embeddings);

struct StructProbeParams {
  int rank_k = 128;  // <= 0 selects full rank; larger than dim is clamped
  double learning_rate = 1e-3;
  int batch_size = 20;
  int patience = 5;
  int max_epochs = 50;
  double dev_fraction = 0.1;
  // After every epoch without dev improvement, training restarts from the
  // best parameters with fresh Adam moments and the step size scaled by this.
  double lr_decay = 0.1;
  // Relative dev-loss improvement that counts as progress.
  double min_rel_improvement = 1e-4;
  double init_scale = 0.05;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const;
};

struct TrainingTrace {
  std::vector<double> train_loss;  // full-train loss after each epoch
  std::vector<double> dev_loss;
  int best_epoch = -1;
  long steps = 0;
};

// (1/n^2) * sum over ordered pairs i != j of |tree_dist - probe_distance|.
double sentence_loss(const ProbeMatrix& probe, const SentenceInstance& sentence);
double corpus_loss(const ProbeMatrix& probe, const std::vector<SentenceInstance>& sentences);

// Adam on the mean sentence loss with early stopping on a seeded dev split.
// Returns the parameters with the best dev loss.
ProbeMatrix train_probe(const std::vector<SentenceInstance>& train,
                        const StructProbeParams& params, std::uint64_t seed,
                        TrainingTrace* trace = nullptr);

// Minimum spanning tree (Prim), ties broken by the lexicographically smaller
// (min, max) edge. Returned edges are normalized (i < j) and sorted.
EdgeList decode_tree(const Matrix& pred_dist);

struct EdgeAgreement {
  long correct = 0;
  long total = 0;

  double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
  EdgeAgreement& operator+=(const EdgeAgreement& other) {
    correct += other.correct;
    total += other.total;
    return *this;
  }
};

EdgeAgreement edge_agreement(const EdgeList& pred, const EdgeList& gold);
double uuas(const EdgeList& pred, const EdgeList& gold);
// Edge-count-weighted (micro) mean over sentences.
double corpus_uuas(const std::vector<EdgeList>& preds, const std::vector<EdgeList>& golds);

// Chain parse {(i, i+1)}.
EdgeList sequential_control(int n);
std::vector<EdgeList> sequential_control(const std::vector<SentenceInstance>& sentences);
// Corpus UUAS of the chain parses against the gold parses.
double gold_vs_sequential(const std::vector<SentenceInstance>& sentences);

struct StructProbeFold {
  int fold = 0;
  double uuas_gold = 0.0;
  double uuas_sequential = 0.0;
  double gold_vs_sequential = 0.0;
};

// Sentence-level k-fold cross-validation: seeded shuffle, contiguous test
// blocks, probe trained on the remainder.
std::vector<StructProbeFold> run_structural_probe(
    const std::vector<SentenceInstance>& sentences, const StructProbeParams& params,
    std::uint64_t seed, int n_folds = 5);

}  // namespace probekit
