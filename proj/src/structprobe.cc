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

#include "probekit/structprobe.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <set>

#include "probekit/dataio.h"

namespace probekit {

namespace {

Edge normalized(Edge e) {
  if (e.first > e.second) std::swap(e.first, e.second);
  return e;
}

// Loss and gradient of one sentence. The gradient of
// (1/n^2) sum_{i != j} |t_ij - d_ij| with d_ij = ||B(h_i - h_j)||^2 is
// (4/n^2) P^T L H, where P = H B^T and L is the Laplacian of the sign
// matrix s_ij = sign(d_ij - t_ij).
double sentence_loss_and_grad(const Matrix& b, const SentenceInstance& s,
                              Matrix* grad) {
  const int n = s.size();
  const Matrix projected = s.embeddings * b.transpose();
  Matrix laplacian = Matrix::Zero(n, n);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double d = (projected.row(i) - projected.row(j)).squaredNorm();
      const double diff = d - static_cast<double>(s.tree_dist(i, j));
      loss += std::abs(diff);
      const double sign = (diff > 0.0) - (diff < 0.0);
      laplacian(i, j) -= sign;
      laplacian(j, i) -= sign;
      laplacian(i, i) += sign;
      laplacian(j, j) += sign;
    }
  }
  const double norm = static_cast<double>(n) * n;
  if (grad != nullptr) {
    grad->noalias() += (4.0 / norm) * projected.transpose() * laplacian * s.embeddings;
  }
  return 2.0 * loss / norm;
}

}  // namespace

Eigen::MatrixXi tree_distances(int n, const EdgeList& edges) {
  validate_tree(n, edges);
  std::vector<std::vector<int>> adj(n);
  for (auto [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  Eigen::MatrixXi dist = Eigen::MatrixXi::Constant(n, n, -1);
  for (int src = 0; src < n; ++src) {
    std::queue<int> queue;
    queue.push(src);
    dist(src, src) = 0;
    while (!queue.empty()) {
      const int u = queue.front();
      queue.pop();
      for (int v : adj[u]) {
        if (dist(src, v) < 0) {
          dist(src, v) = dist(src, u) + 1;
          queue.push(v);
        }
      }
    }
  }
  return dist;
}

SentenceInstance make_sentence(std::string sentence_id, Matrix embeddings,
                               EdgeList gold_edges) {
  const int n = static_cast<int>(embeddings.rows());
  if (n < 2) {
    throw ValidationError("sentence " + sentence_id + ": needs at least two words");
  }
  SentenceInstance s;
  try {
    s.tree_dist = tree_distances(n, gold_edges);
  } catch (const ValidationError& e) {
    throw ValidationError("sentence " + sentence_id + ": " + e.what());
  }
  if (!embeddings.allFinite()) {
    throw ValidationError("sentence " + sentence_id + ": non-finite embedding");
  }
  s.sentence_id = std::move(sentence_id);
  s.embeddings = std::move(embeddings);
  for (auto& e : gold_edges) e = normalized(e);
  std::sort(gold_edges.begin(), gold_edges.end());
  s.gold_edges = std::move(gold_edges);
  return s;
}

double probe_distance(const ProbeMatrix& probe, const Vector& h_i, const Vector& h_j) {
  if (h_i.size() != probe.dim() || h_j.size() != probe.dim()) {
    throw ValidationError("probe_distance: expected dim " + std::to_string(probe.dim()));
  }
  return (probe.b * (h_i - h_j)).squaredNorm();
}

Matrix probe_distances(const ProbeMatrix& probe, const Matrix& embeddings) {
  if (embeddings.cols() != probe.dim()) {
    throw ValidationError("probe_distances: expected dim " + std::to_string(probe.dim()));
  }
  const Matrix projected = embeddings * probe.b.transpose();
  const Eigen::Index n = embeddings.rows();
  Matrix out = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      out(i, j) = out(j, i) = (projected.row(i) - projected.row(j)).squaredNorm();
    }
  }
  return out;
}

void StructProbeParams::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("structural probe: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("structural probe: batch_size must be >= 1");
  if (patience < 1) throw ConfigError("structural probe: patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("structural probe: max_epochs must be >= 1");
  if (!(dev_fraction >= 0.0 && dev_fraction < 1.0)) {
    throw ConfigError("structural probe: dev_fraction must lie in [0, 1)");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
    throw ConfigError("structural probe: lr_decay must lie in (0, 1]");
  }
  if (!(init_scale > 0.0)) throw ConfigError("structural probe: init_scale must be > 0");
}

double sentence_loss(const ProbeMatrix& probe, const SentenceInstance& sentence) {
  if (sentence.embeddings.cols() != probe.dim()) {
    throw ValidationError("sentence_loss: dimension mismatch");
  }
  return sentence_loss_and_grad(probe.b, sentence, nullptr);
}

double corpus_loss(const ProbeMatrix& probe, const std::vector<SentenceInstance>& sentences) {
  if (sentences.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : sentences) total += sentence_loss(probe, s);
  return total / static_cast<double>(sentences.size());
}

ProbeMatrix train_probe(const std::vector<SentenceInstance>& train,
                        const StructProbeParams& params, std::uint64_t seed,
                        TrainingTrace* trace) {
  params.validate();
  if (train.empty()) throw ConfigError("train_probe: no training sentences");
  const int dim = static_cast<int>(train.front().embeddings.cols());
  for (const auto& s : train) {
    if (s.embeddings.cols() != dim) {
      throw ValidationError("train_probe: sentence " + s.sentence_id +
                            " has inconsistent embedding dimension");
    }
  }
  const int rank = params.rank_k <= 0 ? dim : std::min(params.rank_k, dim);

  std::mt19937_64 rng(seed);
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> dev_idx;
  std::vector<int> fit_idx;
  if (train.size() >= 2 && params.dev_fraction > 0.0) {
    const auto n_dev = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(params.dev_fraction * train.size())), 1,
        train.size() - 1);
    dev_idx.assign(order.begin(), order.begin() + static_cast<long>(n_dev));
    fit_idx.assign(order.begin() + static_cast<long>(n_dev), order.end());
  } else {
    fit_idx = order;
    dev_idx = order;
  }

  std::uniform_real_distribution<double> init(-params.init_scale, params.init_scale);
  ProbeMatrix probe{Matrix(rank, dim)};
  for (Eigen::Index i = 0; i < probe.b.size(); ++i) probe.b.data()[i] = init(rng);

  auto loss_over = [&](const std::vector<int>& idx) {
    double total = 0.0;
    for (int i : idx) total += sentence_loss_and_grad(probe.b, train[i], nullptr);
    return total / static_cast<double>(idx.size());
  };

  Matrix first_moment = Matrix::Zero(rank, dim);
  Matrix second_moment = Matrix::Zero(rank, dim);
  Matrix grad(rank, dim);
  double lr = params.learning_rate;
  long step = 0;
  long step_in_phase = 0;
  double best_dev = loss_over(dev_idx);
  ProbeMatrix best = probe;
  int best_epoch = -1;
  int stale = 0;
  TrainingTrace local;

  for (int epoch = 0; epoch < params.max_epochs; ++epoch) {
    std::shuffle(fit_idx.begin(), fit_idx.end(), rng);
    for (std::size_t start = 0; start < fit_idx.size();
         start += static_cast<std::size_t>(params.batch_size)) {
      const std::size_t stop =
          std::min(fit_idx.size(), start + static_cast<std::size_t>(params.batch_size));
      grad.setZero();
      double loss = 0.0;
      for (std::size_t p = start; p < stop; ++p) {
        loss += sentence_loss_and_grad(probe.b, train[fit_idx[p]], &grad);
      }
      const double count = static_cast<double>(stop - start);
      grad /= count;
      loss /= count;
      ++step;
      ++step_in_phase;
      if (!std::isfinite(loss) || !grad.allFinite()) {
        throw TrainingError("train_probe: loss diverged at step " + std::to_string(step),
                            step);
      }
      first_moment = params.adam_beta1 * first_moment + (1.0 - params.adam_beta1) * grad;
      second_moment = params.adam_beta2 * second_moment +
                      (1.0 - params.adam_beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(params.adam_beta1, static_cast<double>(step_in_phase));
      const double c2 = 1.0 - std::pow(params.adam_beta2, static_cast<double>(step_in_phase));
      probe.b.array() -= lr * (first_moment.array() / c1) /
                         ((second_moment.array() / c2).sqrt() + params.adam_epsilon);
      if (!probe.b.allFinite()) {
        throw TrainingError("train_probe: parameters diverged at step " +
                                std::to_string(step),
                            step);
      }
    }

    const double dev = loss_over(dev_idx);
    local.train_loss.push_back(loss_over(fit_idx));
    local.dev_loss.push_back(dev);
    if (!std::isfinite(dev)) {
      throw TrainingError("train_probe: dev loss diverged after epoch " +
                              std::to_string(epoch),
                          step);
    }
    if (dev < best_dev * (1.0 - params.min_rel_improvement)) {
      best_dev = dev;
      best = probe;
      best_epoch = epoch;
      stale = 0;
    } else {
      if (++stale >= params.patience) break;
      // Continue from the best parameters with a smaller step and fresh
      // moment estimates.
      probe = best;
      first_moment.setZero();
      second_moment.setZero();
      step_in_phase = 0;
      lr *= params.lr_decay;
    }
  }
  if (trace != nullptr) {
    local.best_epoch = best_epoch;
    local.steps = step;
    *trace = std::move(local);
  }
  return best;
}

EdgeList decode_tree(const Matrix& pred_dist) {
  const int n = static_cast<int>(pred_dist.rows());
  if (pred_dist.cols() != n) throw ValidationError("decode_tree: matrix must be square");
  if (!pred_dist.allFinite()) throw ValidationError("decode_tree: non-finite distance");
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (pred_dist(i, j) != pred_dist(j, i)) {
        throw ValidationError("decode_tree: distance matrix is not symmetric");
      }
    }
  }
  EdgeList edges;
  if (n <= 1) return edges;

  std::vector<bool> in_tree(n, false);
  std::vector<double> best_weight(n, std::numeric_limits<double>::infinity());
  std::vector<Edge> best_edge(n, {-1, -1});
  auto better = [](double w, Edge e, double w_ref, Edge e_ref) {
    if (w != w_ref) return w < w_ref;
    return e < e_ref;
  };
  auto relax = [&](int u) {
    for (int v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      const Edge e = normalized({u, v});
      if (best_edge[v].first < 0 || better(pred_dist(u, v), e, best_weight[v], best_edge[v])) {
        best_weight[v] = pred_dist(u, v);
        best_edge[v] = e;
      }
    }
  };
  in_tree[0] = true;
  relax(0);
  for (int added = 1; added < n; ++added) {
    int pick = -1;
    for (int v = 0; v < n; ++v) {
      if (in_tree[v]) continue;
      if (pick < 0 || better(best_weight[v], best_edge[v], best_weight[pick], best_edge[pick])) {
        pick = v;
      }
    }
    in_tree[pick] = true;
    edges.push_back(best_edge[pick]);
    relax(pick);
  }
  std::sort(edges.begin(), edges.end());
  return edges;
}

EdgeAgreement edge_agreement(const EdgeList& pred, const EdgeList& gold) {
  if (pred.size() != gold.size()) {
    throw ValidationError("uuas: trees have different sizes (" +
                          std::to_string(pred.size() + 1) + " vs " +
                          std::to_string(gold.size() + 1) + " nodes)");
  }
  const int n = static_cast<int>(gold.size()) + 1;
  if (n < 2) throw ValidationError("uuas: trees need at least two nodes");
  validate_tree(n, pred);
  validate_tree(n, gold);
  std::set<Edge> gold_set;
  for (const auto& e : gold) gold_set.insert(normalized(e));
  EdgeAgreement out;
  out.total = n - 1;
  for (const auto& e : pred) out.correct += gold_set.count(normalized(e)) ? 1 : 0;
  return out;
}

double uuas(const EdgeList& pred, const EdgeList& gold) {
  return edge_agreement(pred, gold).value();
}

double corpus_uuas(const std::vector<EdgeList>& preds, const std::vector<EdgeList>& golds) {
  if (preds.size() != golds.size()) {
    throw ValidationError("corpus_uuas: prediction and gold counts differ");
  }
  if (preds.empty()) throw ValidationError("corpus_uuas: empty corpus");
  EdgeAgreement total;
  for (std::size_t i = 0; i < preds.size(); ++i) total += edge_agreement(preds[i], golds[i]);
  return total.value();
}

EdgeList sequential_control(int n) {
  if (n < 2) throw ValidationError("sequential_control: needs at least two words");
  EdgeList edges;
  for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return edges;
}

std::vector<EdgeList> sequential_control(const std::vector<SentenceInstance>& sentences) {
  std::vector<EdgeList> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(sequential_control(s.size()));
  return out;
}

double gold_vs_sequential(const std::vector<SentenceInstance>& sentences) {
  std::vector<EdgeList> golds;
  for (const auto& s : sentences) golds.push_back(s.gold_edges);
  return corpus_uuas(sequential_control(sentences), golds);
}

std::vector<StructProbeFold> run_structural_probe(
    const std::vector<SentenceInstance>& sentences, const StructProbeParams& params,
    std::uint64_t seed, int n_folds) {
  if (n_folds < 2) throw ConfigError("structural probe: need at least two folds");
  if (static_cast<int>(sentences.size()) < n_folds) {
    throw ConfigError("structural probe: " + std::to_string(sentences.size()) +
                      " sentences cannot fill " + std::to_string(n_folds) + " folds");
  }
  std::vector<int> order(sentences.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t total = order.size();
  std::vector<StructProbeFold> out;
  for (int fold = 0; fold < n_folds; ++fold) {
    const std::size_t lo = static_cast<std::size_t>(fold) * total / n_folds;
    const std::size_t hi = static_cast<std::size_t>(fold + 1) * total / n_folds;
    std::vector<SentenceInstance> train;
    std::vector<const SentenceInstance*> test;
    for (std::size_t p = 0; p < total; ++p) {
      if (p >= lo && p < hi) {
        test.push_back(&sentences[order[p]]);
      } else {
        train.push_back(sentences[order[p]]);
      }
    }
    const ProbeMatrix probe = train_probe(train, params, derive_seed(seed, fold));
    EdgeAgreement vs_gold, vs_chain, chain_vs_gold;
    for (const SentenceInstance* s : test) {
      const EdgeList pred = decode_tree(probe_distances(probe, s->embeddings));
      const EdgeList chain = sequential_control(s->size());
      vs_gold += edge_agreement(pred, s->gold_edges);
      vs_chain += edge_agreement(pred, chain);
      chain_vs_gold += edge_agreement(chain, s->gold_edges);
    }
    out.push_back({fold, vs_gold.value(), vs_chain.value(), chain_vs_gold.value()});
  }
  return out;
}

}  // namespace probekit
