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

#include "probekit/pipeline.h"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "probekit/abx.h"
#include "probekit/pooling.h"
#include "probekit/trajectory.h"

namespace probekit {

using nlohmann::json;

namespace {

constexpr int kAbxPresetTriplets = 2326;
constexpr int kSyntaxPresetSentences = 2406;
constexpr const char* kSequentialSuffix = "/sequential";
constexpr const char* kErrorHeader = "probe_id,model_id,step,layer_id,error";

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  if (p.is_relative()) p = base / p;
  return p.lexically_normal();
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  return it->get<T>();
}

std::optional<std::string> optional_string(const json& obj, const char* key,
                                           std::optional<std::string> fallback) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.contains(it.key())) {
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

StructProbeParams parse_structural(const json& obj, const std::string& where) {
  check_keys(obj,
             {"rank_k", "learning_rate", "batch_size", "patience", "max_epochs",
              "dev_fraction", "lr_decay", "min_rel_improvement", "init_scale"},
             where);
  StructProbeParams p;
  p.rank_k = get_or(obj, "rank_k", p.rank_k);
  p.learning_rate = get_or(obj, "learning_rate", p.learning_rate);
  p.batch_size = get_or(obj, "batch_size", p.batch_size);
  p.patience = get_or(obj, "patience", p.patience);
  p.max_epochs = get_or(obj, "max_epochs", p.max_epochs);
  p.dev_fraction = get_or(obj, "dev_fraction", p.dev_fraction);
  p.lr_decay = get_or(obj, "lr_decay", p.lr_decay);
  p.min_rel_improvement = get_or(obj, "min_rel_improvement", p.min_rel_improvement);
  p.init_scale = get_or(obj, "init_scale", p.init_scale);
  return p;
}

ProbeSpec parse_probe(const json& obj, const fs::path& base, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  check_keys(obj,
             {"probe_id", "kind", "preset", "annotations", "label_column", "disjoint_by",
              "shrinkage", "reference", "group_by", "exclude_same", "subsample_fraction",
              "triplets", "meaning_column", "parses", "structural"},
             where);
  ProbeSpec p;
  if (!obj.contains("probe_id") || !obj.contains("kind") || !obj.contains("annotations")) {
    throw ConfigError(where + ": probe_id, kind and annotations are required");
  }
  p.probe_id = obj.at("probe_id").get<std::string>();
  p.kind = parse_probe_kind(obj.at("kind").get<std::string>());
  p.preset = optional_string(obj, "preset", std::nullopt);
  p.annotations = resolve(base, obj.at("annotations").get<std::string>());
  p.label_column = get_or<std::string>(obj, "label_column", "label");

  switch (p.kind) {
    case ProbeKind::kCluster: {
      if (p.preset) p.cluster = cluster_preset(*p.preset);
      p.cluster.disjoint_by = optional_string(obj, "disjoint_by", p.cluster.disjoint_by);
      p.cluster.shrinkage = get_or(obj, "shrinkage", p.cluster.shrinkage);
      break;
    }
    case ProbeKind::kRsa: {
      if (!obj.contains("reference")) throw ConfigError(where + ": rsa probe needs 'reference'");
      p.reference = resolve(base, obj.at("reference").get<std::string>());
      if (p.preset) p.rsa = rsa_preset(*p.preset).config;
      p.rsa.group_by = optional_string(obj, "group_by", p.rsa.group_by);
      p.rsa.exclude_same = optional_string(obj, "exclude_same", p.rsa.exclude_same);
      p.rsa.subsample_fraction = get_or(obj, "subsample_fraction", p.rsa.subsample_fraction);
      break;
    }
    case ProbeKind::kAbx: {
      if (!obj.contains("triplets")) throw ConfigError(where + ": abx probe needs 'triplets'");
      p.triplets = resolve(base, obj.at("triplets").get<std::string>());
      p.meaning_column = get_or<std::string>(obj, "meaning_column", "label");
      break;
    }
    case ProbeKind::kStructural: {
      if (!obj.contains("parses")) throw ConfigError(where + ": structural probe needs 'parses'");
      p.parses = resolve(base, obj.at("parses").get<std::string>());
      if (obj.contains("structural")) {
        p.structural = parse_structural(obj.at("structural"), where + ".structural");
      }
      break;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Loaded probe inputs, shared read-only by all cells.

struct ProbeData {
  const ProbeSpec* spec = nullptr;
  AnnotationTable annotations;
  FeatureTable reference;
  std::vector<AbxTriplet> triplets;
  std::vector<ParseRecord> parses;  // sentences of two or more words only
  std::vector<const AnnotationRow*> units;  // rows the probe needs
};

std::vector<const AnnotationRow*> rows_for(const AnnotationTable& table,
                                           const std::vector<std::string>& ids) {
  std::vector<const AnnotationRow*> out;
  std::unordered_set<std::string> seen;
  for (const auto& id : ids) {
    if (!seen.insert(id).second) continue;
    const AnnotationRow* row = table.find(id);
    if (row == nullptr) throw ValidationError("unit '" + id + "' is not in the annotation table");
    out.push_back(row);
  }
  return out;
}

ProbeData load_probe(const ProbeSpec& spec) {
  ProbeData d;
  d.spec = &spec;
  d.annotations = read_annotations(spec.annotations);
  std::vector<std::string> ids;
  switch (spec.kind) {
    case ProbeKind::kCluster:
      for (const auto& r : d.annotations.rows()) ids.push_back(r.unit_id);
      break;
    case ProbeKind::kRsa: {
      d.reference = read_feature_table(spec.reference);
      const auto ref_index = d.reference.index();
      for (const auto& r : d.annotations.rows()) {
        if (ref_index.contains(r.unit_id)) ids.push_back(r.unit_id);
      }
      break;
    }
    case ProbeKind::kAbx:
      d.triplets = read_triplets(spec.triplets);
      for (const auto& t : d.triplets) {
        ids.push_back(t.a_id);
        ids.push_back(t.b_id);
        ids.push_back(t.x_id);
      }
      break;
    case ProbeKind::kStructural:
      for (auto& p : read_parses(spec.parses)) {
        if (p.words.size() < 2) continue;
        for (const auto& w : p.words) ids.push_back(w);
        d.parses.push_back(std::move(p));
      }
      break;
  }
  d.units = rows_for(d.annotations, ids);
  return d;
}

std::map<std::string, std::string> labels_of(const AnnotationRow& row) {
  std::map<std::string, std::string> out = row.aux_labels;
  out["label"] = row.label;
  return out;
}

double gold_vs_sequential_of(const std::vector<ParseRecord>& parses) {
  std::vector<EdgeList> preds, golds;
  for (const auto& p : parses) {
    preds.push_back(sequential_control(static_cast<int>(p.words.size())));
    EdgeList gold = p.edges;
    for (auto& e : gold) {
      if (e.first > e.second) std::swap(e.first, e.second);
    }
    std::sort(gold.begin(), gold.end());
    golds.push_back(std::move(gold));
  }
  return corpus_uuas(preds, golds);
}

// ---------------------------------------------------------------------------
// Cells

struct Cell {
  const ProbeData* probe = nullptr;
  std::string model_id;
  std::int64_t step = 0;
  LayerEntry layer;
};

std::string cell_key(const std::string& probe_id, const std::string& model_id, std::int64_t step,
                     const std::string& layer_id) {
  std::string key = probe_id;
  key += '\x1f';
  key += model_id;
  key += '\x1f';
  key += std::to_string(step);
  key += '\x1f';
  key += layer_id;
  return key;
}

std::string primary_probe_id(const std::string& id) {
  const auto slash = id.find('/');
  return slash == std::string::npos ? id : id.substr(0, slash);
}

std::unordered_map<std::string, Vector> pool_cell_units(const Cell& cell) {
  std::map<std::string, std::vector<const AnnotationRow*>> by_utterance;
  for (const AnnotationRow* row : cell.probe->units) by_utterance[row->utterance_id].push_back(row);

  std::unordered_map<std::string, Vector> pooled;
  for (const auto& [utterance, rows] : by_utterance) {
    const fs::path path = utterance_path(cell.layer.embedding_dir, utterance);
    const FrameEmbeddings frames = read_embedding_file(path);
    if (frames.layer_id != cell.layer.layer_id) {
      throw ValidationError(path.string() + ": header layer_id '" + frames.layer_id +
                            "' does not match manifest layer '" + cell.layer.layer_id + "'");
    }
    for (const AnnotationRow* row : rows) {
      pooled.emplace(row->unit_id, pool_unit(frames, *row).vector);
    }
  }
  return pooled;
}

std::vector<ProbeScore> execute_cell(const Cell& cell, int n_folds, std::uint64_t seed) {
  const ProbeData& d = *cell.probe;
  const ProbeSpec& spec = *d.spec;
  const auto pooled = pool_cell_units(cell);
  const std::uint64_t s = cell_seed(seed, spec.probe_id, cell.model_id, cell.step, cell.layer.layer_id);

  auto make = [&](const std::string& probe_id, int fold, double score) {
    ProbeScore p{probe_id, cell.model_id, cell.step, cell.layer.layer_id, fold, score};
    validate_score(p);
    return p;
  };

  std::vector<ProbeScore> out;
  switch (spec.kind) {
    case ProbeKind::kCluster: {
      std::vector<LabeledUnit> units;
      for (const AnnotationRow* row : d.units) {
        LabeledUnit u;
        u.unit_id = row->unit_id;
        u.vector = pooled.at(row->unit_id);
        u.label = d.annotations.value(*row, spec.label_column);
        if (spec.cluster.disjoint_by) u.disjointness_key = d.annotations.value(*row, *spec.cluster.disjoint_by);
        units.push_back(std::move(u));
      }
      for (const auto& f : run_cluster_probe(units, spec.cluster, s, n_folds)) {
        out.push_back(make(spec.probe_id, f.fold, f.score));
      }
      break;
    }
    case ProbeKind::kRsa: {
      const auto ref_index = d.reference.index();
      std::vector<RsaUnit> model_units, ref_units;
      for (const AnnotationRow* row : d.units) {
        auto labels = labels_of(*row);
        model_units.push_back({row->unit_id, pooled.at(row->unit_id), labels});
        ref_units.push_back({row->unit_id,
                             d.reference.values.row(ref_index.at(row->unit_id)).transpose(),
                             std::move(labels)});
      }
      for (const auto& f : run_rsa_probe(model_units, ref_units, spec.rsa, s, n_folds)) {
        out.push_back(make(spec.probe_id, f.fold, f.score));
      }
      break;
    }
    case ProbeKind::kAbx: {
      EmbeddingLookup lookup(pooled.begin(), pooled.end());
      for (const auto& f : abx_accuracy(d.triplets, lookup, s, n_folds)) {
        out.push_back(make(spec.probe_id, f.fold, f.score));
      }
      break;
    }
    case ProbeKind::kStructural: {
      std::vector<SentenceInstance> sentences;
      for (const auto& p : d.parses) {
        const Eigen::Index dim = pooled.at(p.words.front()).size();
        Matrix emb(static_cast<Eigen::Index>(p.words.size()), dim);
        for (std::size_t w = 0; w < p.words.size(); ++w) {
          emb.row(static_cast<Eigen::Index>(w)) = pooled.at(p.words[w]).transpose();
        }
        sentences.push_back(make_sentence(p.sentence_id, std::move(emb), p.edges));
      }
      for (const auto& f : run_structural_probe(sentences, spec.structural, s, n_folds)) {
        out.push_back(make(spec.probe_id, f.fold, f.uuas_gold));
        out.push_back(make(spec.probe_id + kSequentialSuffix, f.fold, f.uuas_sequential));
      }
      break;
    }
  }
  return out;
}

int rows_per_cell(const ProbeSpec& spec, int n_folds) {
  return spec.kind == ProbeKind::kStructural ? 2 * n_folds : n_folds;
}

// Appends whole cells to the score table with one write(2) each, so a crash
// leaves at most one partial trailing line.
class ScoreAppender {
 public:
  explicit ScoreAppender(const fs::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd_ < 0) throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
  }
  ~ScoreAppender() {
    if (fd_ >= 0) ::close(fd_);
  }
  ScoreAppender(const ScoreAppender&) = delete;
  ScoreAppender& operator=(const ScoreAppender&) = delete;

  void append(const std::vector<ProbeScore>& rows) {
    std::string block;
    for (const auto& r : rows) {
      block += format_score_row(r);
      block += '\n';
    }
    std::lock_guard<std::mutex> lock(mu_);
    const char* data = block.data();
    std::size_t left = block.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, data, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError("write to " + path_.string() + " failed: " + std::strerror(errno));
      }
      data += n;
      left -= static_cast<std::size_t>(n);
    }
  }

 private:
  fs::path path_;
  int fd_ = -1;
  std::mutex mu_;
};

// Rows of a possibly interrupted score table. Unparseable lines (a torn
// final write) are dropped.
std::vector<ProbeScore> read_scores_lenient(const fs::path& path) {
  std::vector<ProbeScore> out;
  if (!fs::exists(path)) return out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (line == kScoreHeader) continue;
    }
    if (line.empty()) continue;
    try {
      out.push_back(parse_score_row(line));
    } catch (const Error&) {
    }
  }
  return out;
}

std::vector<std::string> layer_order_of(const ModelEntry& model) {
  std::vector<std::string> order;
  for (const auto& c : model.checkpoints) {
    for (const auto& l : c.layers) {
      if (std::find(order.begin(), order.end(), l.layer_id) == order.end()) {
        order.push_back(l.layer_id);
      }
    }
  }
  return order;
}

std::string trajectories_csv(const std::vector<TrajectorySummary>& summaries) {
  std::string out = "probe_id,model_id,a,b,c,k,residual_rmse,step_at_95,fit_error\n";
  for (const auto& t : summaries) {
    out += csv_escape(t.probe_id) + "," + csv_escape(t.model_id) + ",";
    if (t.fit) {
      out += format_double(t.fit->a) + "," + format_double(t.fit->b) + "," +
             format_double(t.fit->c) + "," + format_double(t.fit->k) + "," +
             format_double(t.fit->residual_rmse) + ",";
    } else {
      out += ",,,,,";
    }
    out += std::to_string(t.step_at_95) + "," + csv_escape(t.fit_error) + "\n";
  }
  return out;
}

std::string best_layers_csv(const std::vector<TrajectorySummary>& summaries) {
  std::string out = "probe_id,model_id,step,layer_id,score\n";
  for (const auto& t : summaries) {
    for (const auto& p : t.best_layers) {
      out += csv_escape(t.probe_id) + "," + csv_escape(t.model_id) + "," +
             std::to_string(p.step) + "," + csv_escape(p.layer_id) + "," +
             format_double(p.score) + "\n";
    }
  }
  return out;
}

std::vector<TrajectorySummary> summarize_all(const std::vector<std::string>& probe_ids,
                                             const RunManifest& manifest,
                                             const std::vector<ProbeScore>& scores) {
  std::vector<TrajectorySummary> out;
  for (const auto& probe_id : probe_ids) {
    for (const auto& model : manifest.models) {
      const bool any = std::any_of(scores.begin(), scores.end(), [&](const ProbeScore& s) {
        return s.probe_id == probe_id && s.model_id == model.model_id;
      });
      if (!any) continue;
      out.push_back(summarize_trajectory(probe_id, model.model_id, scores, layer_order_of(model)));
    }
  }
  return out;
}

}  // namespace

ProbeKind parse_probe_kind(const std::string& name) {
  if (name == "cluster") return ProbeKind::kCluster;
  if (name == "rsa") return ProbeKind::kRsa;
  if (name == "abx") return ProbeKind::kAbx;
  if (name == "structural") return ProbeKind::kStructural;
  throw ConfigError("unknown probe kind '" + name + "' (cluster, rsa, abx, structural)");
}

std::string probe_kind_name(ProbeKind kind) {
  switch (kind) {
    case ProbeKind::kCluster: return "cluster";
    case ProbeKind::kRsa: return "rsa";
    case ProbeKind::kAbx: return "abx";
    case ProbeKind::kStructural: return "structural";
  }
  return "?";
}

RunConfig load_run_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(path.string() + ": expected a JSON object");
  const fs::path base = fs::absolute(path).parent_path();
  RunConfig c;
  try {
    check_keys(doc, {"manifest", "probes", "n_folds", "seed", "out_dir"}, path.string());
    if (!doc.contains("manifest")) throw ConfigError(path.string() + ": 'manifest' is required");
    c.manifest_path = resolve(base, doc.at("manifest").get<std::string>());
    c.n_folds = get_or(doc, "n_folds", 5);
    c.seed = get_or<std::uint64_t>(doc, "seed", 0);
    c.out_dir = resolve(base, get_or<std::string>(doc, "out_dir", "out"));
    if (doc.contains("probes")) {
      const auto& probes = doc.at("probes");
      if (!probes.is_array()) throw ConfigError(path.string() + ": 'probes' must be an array");
      for (std::size_t i = 0; i < probes.size(); ++i) {
        c.probes.push_back(parse_probe(probes[i], base, "probes[" + std::to_string(i) + "]"));
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return c;
}

int ValidationReport::errors() const {
  return static_cast<int>(std::count_if(issues.begin(), issues.end(), [](const auto& i) {
    return i.severity == ValidationIssue::Severity::kError;
  }));
}

int ValidationReport::warnings() const {
  return static_cast<int>(issues.size()) - errors();
}

std::string ValidationReport::format() const {
  std::string out;
  for (const auto& i : issues) {
    out += i.severity == ValidationIssue::Severity::kError ? "error" : "warning";
    out += " [" + i.path + "] " + i.rule + ": " + i.message + "\n";
  }
  out += std::to_string(errors()) + " errors, " + std::to_string(warnings()) + " warnings\n";
  return out;
}

ValidationReport validate(const RunConfig& config) {
  ValidationReport report;
  auto error = [&](std::string path, std::string rule, std::string message) {
    report.issues.push_back({ValidationIssue::Severity::kError, std::move(path), std::move(rule),
                             std::move(message)});
  };
  auto warning = [&](std::string path, std::string rule, std::string message) {
    report.issues.push_back({ValidationIssue::Severity::kWarning, std::move(path),
                             std::move(rule), std::move(message)});
  };

  if (config.n_folds < 2 || config.n_folds > kMaxFolds) {
    error("n_folds", "fold-count",
          "must lie in [2, " + std::to_string(kMaxFolds) + "], got " + std::to_string(config.n_folds));
  }

  RunManifest manifest;
  bool manifest_ok = false;
  try {
    manifest = read_manifest(config.manifest_path);
    manifest_ok = true;
  } catch (const Error& e) {
    error(config.manifest_path.string(), "manifest", e.what());
  }
  std::vector<fs::path> layer_dirs;
  if (manifest_ok) {
    for (const auto& m : manifest.models) {
      for (const auto& c : m.checkpoints) {
        for (const auto& l : c.layers) {
          if (!fs::is_directory(l.embedding_dir)) {
            error(l.embedding_dir.string(), "embedding-dir",
                  "missing embedding directory for " + m.model_id + " step " +
                      std::to_string(c.step) + " layer " + l.layer_id);
          } else {
            layer_dirs.push_back(l.embedding_dir);
          }
        }
      }
    }
  }

  std::set<std::string> ids;
  for (std::size_t pi = 0; pi < config.probes.size(); ++pi) {
    const ProbeSpec& spec = config.probes[pi];
    const std::string where = "probes[" + std::to_string(pi) + "]";
    if (spec.probe_id.empty() || spec.probe_id.find('/') != std::string::npos ||
        spec.probe_id.find(',') != std::string::npos) {
      error(where + ".probe_id", "probe-id", "must be non-empty without '/' or ','");
    }
    if (!ids.insert(spec.probe_id).second) {
      error(where + ".probe_id", "unique-probe-id", "duplicate probe_id '" + spec.probe_id + "'");
    }

    ProbeData data;
    try {
      data = load_probe(spec);
    } catch (const Error& e) {
      error(where, "probe-inputs", e.what());
      continue;
    }
    const AnnotationTable& ann = data.annotations;
    auto require_column = [&](const std::string& column, const std::string& key) {
      if (!ann.has_column(column)) {
        error(where + "." + key, "annotation-column",
              spec.annotations.string() + " has no column '" + column + "'");
        return false;
      }
      return true;
    };

    // Every referenced utterance must exist in every layer directory.
    std::set<std::string> utterances;
    for (const AnnotationRow* row : data.units) utterances.insert(row->utterance_id);
    for (const auto& dir : layer_dirs) {
      for (const auto& u : utterances) {
        const fs::path p = utterance_path(dir, u);
        if (!fs::exists(p)) error(p.string(), "embedding-file", "missing utterance file");
      }
    }
    int dim = -1;
    if (!layer_dirs.empty() && !utterances.empty()) {
      try {
        dim = read_embedding_file(utterance_path(layer_dirs.front(), *utterances.begin())).dim();
      } catch (const Error&) {
      }
    }

    switch (spec.kind) {
      case ProbeKind::kCluster: {
        const ClusterProbeConfig& cc = spec.cluster;
        try {
          cc.validate();
        } catch (const Error& e) {
          error(where, "cluster-config", e.what());
        }
        if (!require_column(spec.label_column, "label_column")) break;
        std::optional<ClusterProbeConfig> preset;
        if (spec.preset) preset = cluster_preset(*spec.preset);
        if (preset && preset->disjoint_by && !cc.disjoint_by) {
          error(where + ".disjoint_by", "preset-disjointness",
                "preset '" + *spec.preset + "' requires a disjointness key ('" +
                    *preset->disjoint_by + "')");
        }
        if (cc.disjoint_by && !require_column(*cc.disjoint_by, "disjoint_by")) break;

        std::map<std::string, int> per_class;
        std::map<std::string, std::set<std::string>> forms;
        std::vector<LabeledUnit> units;
        for (const AnnotationRow* row : data.units) {
          LabeledUnit u;
          u.unit_id = row->unit_id;
          u.label = ann.value(*row, spec.label_column);
          if (cc.disjoint_by) u.disjointness_key = ann.value(*row, *cc.disjoint_by);
          ++per_class[u.label];
          forms[u.label].insert(u.disjointness_key);
          units.push_back(std::move(u));
        }
        for (const auto& [label, count] : per_class) {
          if (count < config.n_folds) {
            error(where, "class-size",
                  "class '" + label + "' has " + std::to_string(count) +
                      " samples, fewer than the fold count");
          }
        }
        const int n_classes = static_cast<int>(per_class.size());
        if (n_classes < 2) error(where, "class-count", "need at least two classes");
        if (dim >= 0 && n_classes - 1 > dim) {
          error(where, "lda-rank",
                std::to_string(n_classes) + " classes need at least " +
                    std::to_string(n_classes - 1) + " embedding dimensions, have " +
                    std::to_string(dim));
        }
        if (config.n_folds >= 2) {
          try {
            const auto folds =
                make_cluster_folds(units, cc.disjoint_by.has_value(), config.n_folds, config.seed);
            for (std::size_t f = 0; f < folds.size(); ++f) {
              std::set<std::string> test_classes;
              for (int i : folds[f].test) test_classes.insert(units[i].label);
              if (test_classes.size() < 2) {
                error(where, "fold-coverage",
                      "fold " + std::to_string(f) + " tests fewer than two classes");
              }
            }
          } catch (const Error& e) {
            error(where, "disjoint-split", e.what());
          }
        }
        if (preset) {
          if (n_classes != preset->n_categories) {
            warning(where, "preset-mismatch",
                    "preset '" + *spec.preset + "' expects " +
                        std::to_string(preset->n_categories) + " categories, dataset has " +
                        std::to_string(n_classes));
          }
          for (const auto& [label, count] : per_class) {
            if (count != preset->samples_per_category) {
              warning(where, "preset-mismatch",
                      "class '" + label + "' has " + std::to_string(count) +
                          " samples, preset expects " +
                          std::to_string(preset->samples_per_category));
              break;
            }
          }
          if (preset->forms_per_category && cc.disjoint_by) {
            for (const auto& [label, keys] : forms) {
              if (static_cast<int>(keys.size()) != *preset->forms_per_category) {
                warning(where, "preset-mismatch",
                        "class '" + label + "' has " + std::to_string(keys.size()) +
                            " forms, preset expects " +
                            std::to_string(*preset->forms_per_category));
                break;
              }
            }
          }
        }
        break;
      }
      case ProbeKind::kRsa: {
        if (data.units.size() < 3) {
          error(where + ".reference", "rsa-overlap",
                "only " + std::to_string(data.units.size()) +
                    " units shared between annotations and reference");
        }
        if (spec.rsa.group_by) require_column(*spec.rsa.group_by, "group_by");
        if (spec.rsa.exclude_same) require_column(*spec.rsa.exclude_same, "exclude_same");
        if (!(spec.rsa.subsample_fraction > 0.0 && spec.rsa.subsample_fraction <= 1.0)) {
          error(where + ".subsample_fraction", "rsa-config", "must lie in (0, 1]");
        }
        if (spec.preset) {
          const RsaPreset preset = rsa_preset(*spec.preset);
          const int n = static_cast<int>(data.units.size());
          if (preset.total_samples && n != *preset.total_samples) {
            warning(where, "preset-mismatch",
                    std::to_string(n) + " samples, preset expects " +
                        std::to_string(*preset.total_samples));
          }
          if (preset.dims && data.reference.values.cols() != *preset.dims) {
            warning(where, "preset-mismatch",
                    "reference has " + std::to_string(data.reference.values.cols()) +
                        " dimensions, preset expects " + std::to_string(*preset.dims));
          }
          if (!preset.forms_per_group.empty() && spec.rsa.group_by && spec.rsa.exclude_same &&
              ann.has_column(*spec.rsa.group_by) && ann.has_column(*spec.rsa.exclude_same)) {
            std::map<std::string, std::set<std::string>> forms;
            for (const AnnotationRow* row : data.units) {
              forms[ann.value(*row, *spec.rsa.group_by)].insert(
                  ann.value(*row, *spec.rsa.exclude_same));
            }
            for (const auto& [group, expected] : preset.forms_per_group) {
              const int have = forms.contains(group) ? static_cast<int>(forms[group].size()) : 0;
              if (have != expected) {
                warning(where, "preset-mismatch",
                        "group '" + group + "' has " + std::to_string(have) +
                            " forms, preset expects " + std::to_string(expected));
              }
            }
          }
        }
        break;
      }
      case ProbeKind::kAbx: {
        std::unordered_map<std::string, std::string> meaning_of;
        const bool check_meaning = require_column(spec.meaning_column, "meaning_column");
        if (check_meaning) {
          for (const AnnotationRow* row : data.units) {
            meaning_of[row->unit_id] = ann.value(*row, spec.meaning_column);
          }
        }
        for (const auto& t : data.triplets) {
          try {
            validate_triplet(t, check_meaning ? &meaning_of : nullptr);
          } catch (const Error& e) {
            error(spec.triplets.string(), "abx-triplet", e.what());
          }
        }
        if (spec.preset && static_cast<int>(data.triplets.size()) != kAbxPresetTriplets) {
          warning(where, "preset-mismatch",
                  std::to_string(data.triplets.size()) + " triplets, preset expects " +
                      std::to_string(kAbxPresetTriplets));
        }
        break;
      }
      case ProbeKind::kStructural: {
        try {
          spec.structural.validate();
        } catch (const Error& e) {
          error(where + ".structural", "structural-config", e.what());
        }
        if (static_cast<int>(data.parses.size()) < config.n_folds) {
          error(spec.parses.string(), "sentence-count",
                "fewer sentences of two or more words than folds");
        }
        if (spec.preset && static_cast<int>(data.parses.size()) != kSyntaxPresetSentences) {
          warning(where, "preset-mismatch",
                  std::to_string(data.parses.size()) + " sentences, preset expects " +
                      std::to_string(kSyntaxPresetSentences));
        }
        break;
      }
    }
  }
  return report;
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& probe_id,
                        const std::string& model_id, std::int64_t step,
                        const std::string& layer_id) {
  return SeedHasher(seed).add(probe_id).add(model_id).add(step).add(layer_id).value();
}

RunResult run(const RunConfig& config, const RunOptions& options) {
  const ValidationReport report = validate(config);
  if (!report.ok()) throw ValidationError("validation failed:\n" + report.format());
  auto log = [&](const std::string& message) {
    if (options.log) options.log(message);
  };

  const RunManifest manifest = read_manifest(config.manifest_path);
  std::vector<ProbeData> probes;
  probes.reserve(config.probes.size());
  for (const auto& spec : config.probes) probes.push_back(load_probe(spec));

  std::vector<Cell> cells;
  for (const auto& probe : probes) {
    for (const auto& model : manifest.models) {
      for (const auto& ckpt : model.checkpoints) {
        for (const auto& layer : ckpt.layers) {
          cells.push_back({&probe, model.model_id, ckpt.step, layer});
        }
      }
    }
  }

  std::error_code ec;
  fs::create_directories(config.out_dir, ec);
  if (ec) throw IoError("cannot create " + config.out_dir.string() + ": " + ec.message());
  const fs::path scores_path = config.out_dir / "scores.csv";

  // Resume: keep complete cells, drop partial ones.
  std::vector<ProbeScore> kept;
  std::unordered_set<std::string> done;
  if (options.resume) {
    std::unordered_map<std::string, std::vector<ProbeScore>> by_cell;
    for (auto& s : read_scores_lenient(scores_path)) {
      by_cell[cell_key(primary_probe_id(s.probe_id), s.model_id, s.step, s.layer_id)].push_back(
          std::move(s));
    }
    for (const auto& cell : cells) {
      const ProbeSpec& spec = *cell.probe->spec;
      const std::string key = cell_key(spec.probe_id, cell.model_id, cell.step, cell.layer.layer_id);
      auto it = by_cell.find(key);
      if (it == by_cell.end()) continue;
      std::set<std::pair<std::string, int>> slots;
      for (const auto& s : it->second) slots.emplace(s.probe_id, s.fold);
      if (static_cast<int>(slots.size()) == rows_per_cell(spec, config.n_folds) &&
          static_cast<int>(it->second.size()) == rows_per_cell(spec, config.n_folds)) {
        done.insert(key);
        kept.insert(kept.end(), it->second.begin(), it->second.end());
      }
    }
  }
  {
    std::string table = std::string(kScoreHeader) + "\n";
    for (const auto& s : kept) table += format_score_row(s) + "\n";
    write_text_atomic(scores_path, table);
  }

  RunResult result;
  result.cells_total = static_cast<int>(cells.size());
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    if (done.contains(cell_key(c.probe->spec->probe_id, c.model_id, c.step, c.layer.layer_id))) {
      ++result.cells_skipped;
    } else {
      todo.push_back(i);
    }
  }

  ScoreAppender appender(scores_path);
  std::mutex mu;
  std::vector<ProbeScore> fresh;
  std::vector<CellError> errors;
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;

  auto worker = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= todo.size()) return;
      const Cell& cell = cells[todo[t]];
      const std::string& probe_id = cell.probe->spec->probe_id;
      try {
        auto rows = execute_cell(cell, config.n_folds, config.seed);
        appender.append(rows);
        std::lock_guard<std::mutex> lock(mu);
        fresh.insert(fresh.end(), rows.begin(), rows.end());
        ++result.cells_run;
        log("done " + probe_id + " " + cell.model_id + " step " + std::to_string(cell.step) +
            " layer " + cell.layer.layer_id);
      } catch (const IoError& e) {
        std::lock_guard<std::mutex> lock(mu);
        if (!fatal) fatal = std::current_exception();
        next.store(todo.size());
        return;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        errors.push_back({probe_id, cell.model_id, cell.step, cell.layer.layer_id, e.what()});
        ++result.cells_run;
        log("FAILED " + probe_id + " " + cell.model_id + " step " + std::to_string(cell.step) +
            " layer " + cell.layer.layer_id + ": " + e.what());
      }
    }
  };

  const int jobs = std::max(1, options.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  std::vector<ProbeScore> all = kept;
  all.insert(all.end(), fresh.begin(), fresh.end());
  std::sort(all.begin(), all.end(), score_order);
  write_scores(all, scores_path);

  std::sort(errors.begin(), errors.end(), [](const CellError& a, const CellError& b) {
    return std::tie(a.probe_id, a.model_id, a.step, a.layer_id) <
           std::tie(b.probe_id, b.model_id, b.step, b.layer_id);
  });
  {
    std::string text = std::string(kErrorHeader) + "\n";
    for (const auto& e : errors) {
      std::string message = e.message;
      std::replace(message.begin(), message.end(), '\n', ' ');
      text += csv_escape(e.probe_id) + "," + csv_escape(e.model_id) + "," +
              std::to_string(e.step) + "," + csv_escape(e.layer_id) + "," +
              csv_escape(message) + "\n";
    }
    write_text_atomic(config.out_dir / "errors.csv", text);
  }

  std::vector<std::string> probe_ids;
  for (const auto& spec : config.probes) probe_ids.push_back(spec.probe_id);
  const auto summaries = summarize_all(probe_ids, manifest, all);
  write_text_atomic(config.out_dir / "trajectories.csv", trajectories_csv(summaries));
  write_text_atomic(config.out_dir / "best_layers.csv", best_layers_csv(summaries));

  write_manifest(manifest, config.out_dir / "manifest.json");
  json info;
  info["seed"] = config.seed;
  info["n_folds"] = config.n_folds;
  info["probes"] = json::array();
  for (const auto& probe : probes) {
    json p;
    p["probe_id"] = probe.spec->probe_id;
    p["kind"] = probe_kind_name(probe.spec->kind);
    if (probe.spec->kind == ProbeKind::kStructural) {
      p["sequential_id"] = probe.spec->probe_id + kSequentialSuffix;
      p["gold_vs_sequential"] = gold_vs_sequential_of(probe.parses);
    }
    info["probes"].push_back(std::move(p));
  }
  write_text_atomic(config.out_dir / "run_info.json", info.dump(2) + "\n");

  result.errors = std::move(errors);
  result.exit_code = result.errors.empty() ? ExitCode::kOk : ExitCode::kPartialFailure;
  return result;
}

namespace {

struct FoldStats {
  double mean = 0.0;
  double sd = 0.0;
  int n = 0;
};

FoldStats stats_of(const std::vector<double>& values) {
  FoldStats s;
  s.n = static_cast<int>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= s.n;
  if (s.n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

constexpr int kCurveSamples = 50;

}  // namespace

std::vector<fs::path> report(const fs::path& out_dir) {
  const fs::path info_path = out_dir / "run_info.json";
  const fs::path scores_path = out_dir / "scores.csv";
  for (const auto& p : {info_path, scores_path, out_dir / "manifest.json"}) {
    if (!fs::exists(p)) throw IoError("report: missing " + p.string());
  }
  json info;
  try {
    info = json::parse(read_text(info_path));
  } catch (const json::exception& e) {
    throw CorruptFileError(info_path.string() + ": " + e.what());
  }
  const RunManifest manifest = read_manifest(out_dir / "manifest.json");
  const std::vector<ProbeScore> scores = read_scores(scores_path);

  std::vector<std::string> probe_ids;
  std::vector<std::string> missing;
  for (const auto& p : info.at("probes")) {
    const std::string id = p.at("probe_id").get<std::string>();
    probe_ids.push_back(id);
    const bool any = std::any_of(scores.begin(), scores.end(),
                                 [&](const ProbeScore& s) { return s.probe_id == id; });
    if (!any) missing.push_back(id);
  }
  if (!missing.empty()) {
    throw ValidationError("report: no scores for probe(s): " + join(missing, ", "));
  }

  using CellKey = std::tuple<std::string, std::string, std::int64_t, std::string>;
  std::map<CellKey, std::vector<double>> by_cell;
  for (const auto& s : scores) by_cell[{s.probe_id, s.model_id, s.step, s.layer_id}].push_back(s.score);

  std::vector<fs::path> written;
  {
    std::string text = "probe_id,model_id,step,layer_id,mean,sd,n_folds\n";
    for (const auto& [key, values] : by_cell) {
      const auto& [probe, model, step, layer] = key;
      const FoldStats st = stats_of(values);
      text += csv_escape(probe) + "," + csv_escape(model) + "," + std::to_string(step) + "," +
              csv_escape(layer) + "," + format_double(st.mean) + "," + format_double(st.sd) +
              "," + std::to_string(st.n) + "\n";
    }
    written.push_back(out_dir / "layerwise.csv");
    write_text_atomic(written.back(), text);
  }

  const auto summaries = summarize_all(probe_ids, manifest, scores);
  {
    std::string text = "probe_id,model_id,step,layer_id,score,fitted,step_at_95\n";
    for (const auto& t : summaries) {
      for (const auto& p : t.best_layers) {
        text += csv_escape(t.probe_id) + "," + csv_escape(t.model_id) + "," +
                std::to_string(p.step) + "," + csv_escape(p.layer_id) + "," +
                format_double(p.score) + "," +
                (t.fit ? format_double((*t.fit)(static_cast<double>(p.step))) : "") + "," +
                std::to_string(t.step_at_95) + "\n";
      }
    }
    written.push_back(out_dir / "trajectory.csv");
    write_text_atomic(written.back(), text);
  }
  {
    std::string text = "probe_id,model_id,step,fitted,normalized,step_at_95\n";
    for (const auto& t : summaries) {
      if (!t.fit || t.best_layers.size() < 2) continue;
      const double lo = static_cast<double>(t.best_layers.front().step);
      const double hi = static_cast<double>(t.best_layers.back().step);
      std::vector<double> xs;
      for (int i = 0; i < kCurveSamples; ++i) xs.push_back(lo + (hi - lo) * i / (kCurveSamples - 1));
      std::vector<double> norm;
      try {
        norm = normalize_curve(*t.fit, xs);
      } catch (const UndefinedScoreError&) {
        continue;
      }
      for (int i = 0; i < kCurveSamples; ++i) {
        text += csv_escape(t.probe_id) + "," + csv_escape(t.model_id) + "," +
                format_double(xs[i]) + "," + format_double((*t.fit)(xs[i])) + "," +
                format_double(norm[i]) + "," + std::to_string(t.step_at_95) + "\n";
      }
    }
    written.push_back(out_dir / "normalized_curves.csv");
    write_text_atomic(written.back(), text);
  }
  {
    std::string text =
        "probe_id,model_id,step,layer_id,uuas,uuas_sequential,gold_vs_sequential,best_layer\n";
    for (const auto& p : info.at("probes")) {
      if (!p.contains("sequential_id")) continue;
      const std::string id = p.at("probe_id").get<std::string>();
      const std::string seq_id = p.at("sequential_id").get<std::string>();
      const double gvs = p.at("gold_vs_sequential").get<double>();
      for (const auto& t : summaries) {
        if (t.probe_id != id) continue;
        std::map<std::int64_t, std::string> best;
        for (const auto& b : t.best_layers) best[b.step] = b.layer_id;
        for (const auto& [key, values] : by_cell) {
          const auto& [probe, model, step, layer] = key;
          if (probe != id || model != t.model_id) continue;
          auto seq = by_cell.find({seq_id, model, step, layer});
          text += csv_escape(id) + "," + csv_escape(model) + "," + std::to_string(step) + "," +
                  csv_escape(layer) + "," + format_double(stats_of(values).mean) + "," +
                  (seq == by_cell.end() ? "" : format_double(stats_of(seq->second).mean)) + "," +
                  format_double(gvs) + "," + (best[step] == layer ? "1" : "0") + "\n";
        }
      }
    }
    written.push_back(out_dir / "syntax_control.csv");
    write_text_atomic(written.back(), text);
  }
  return written;
}

}  // namespace probekit
