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
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "probekit/common.h"

namespace probekit {

namespace fs = std::filesystem;

inline constexpr double kDefaultFramePeriodS = 0.02;

// Hidden states of one layer for one utterance, one row per frame.
struct FrameEmbeddings {
  std::string utterance_id;
  std::string layer_id;
  double frame_period_s = kDefaultFramePeriodS;
  RowMajorMatrixF frames;

  int n_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
  double duration_s() const { return n_frames() * frame_period_s; }
};

// Embedding file layout:
//   8 bytes   magic "PKEMBv1\n"
//   4 bytes   little-endian uint32 header length L
//   L bytes   UTF-8 JSON header {utterance_id, layer_id, n_frames, dim,
//             frame_period_s?}
//   payload   n_frames * dim little-endian float32, row-major
FrameEmbeddings read_embedding_file(const fs::path& path);
void write_embedding_file(const FrameEmbeddings& embeddings, const fs::path& path);

// Reference feature space (acoustic, semantic): an embedding file whose rows
// are units, plus a sidecar "<path>.ids" listing one unit_id per row.
struct FeatureTable {
  std::vector<std::string> ids;
  Matrix values;  // ids.size() x dim

  std::unordered_map<std::string, int> index() const;
};

FeatureTable read_feature_table(const fs::path& path);
void write_feature_table(const FeatureTable& table, const fs::path& path);
fs::path feature_ids_path(const fs::path& path);

struct AnnotationRow {
  std::string unit_id;
  std::string utterance_id;
  double start_s = 0.0;
  double end_s = 0.0;
  std::string label;
  std::map<std::string, std::string> aux_labels;
};

class AnnotationTable {
 public:
  AnnotationTable() = default;
  // Validates every row; throws ValidationError on the first bad one.
  AnnotationTable(std::vector<AnnotationRow> rows,
                  std::vector<std::string> aux_columns);

  const std::vector<AnnotationRow>& rows() const { return rows_; }
  const std::vector<std::string>& aux_columns() const { return aux_columns_; }
  std::size_t size() const { return rows_.size(); }

  const AnnotationRow* find(const std::string& unit_id) const;
  bool has_column(const std::string& column) const;
  // "label" names the primary label; anything else is looked up in the
  // auxiliary columns. Throws ValidationError when absent.
  const std::string& value(const AnnotationRow& row,
                           const std::string& column) const;

 private:
  std::vector<AnnotationRow> rows_;
  std::vector<std::string> aux_columns_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// CSV with header: unit_id,utterance_id,start_s,end_s,label[,aux...]
AnnotationTable read_annotations(const fs::path& path);
void write_annotations(const AnnotationTable& table, const fs::path& path);

// One dependency-parsed sentence. Edges are undirected word-index pairs.
struct ParseRecord {
  std::string sentence_id;
  std::vector<std::string> words;
  std::vector<std::pair<int, int>> edges;
};

// Throws ValidationError unless `edges` is a spanning tree over n nodes.
void validate_tree(int n, const std::vector<std::pair<int, int>>& edges);

// JSON Lines: one parse document per line.
std::vector<ParseRecord> read_parses(const fs::path& path);
void write_parses(const std::vector<ParseRecord>& parses, const fs::path& path);

struct LayerEntry {
  std::string layer_id;
  fs::path embedding_dir;
};

struct CheckpointEntry {
  std::int64_t step = 0;
  std::vector<LayerEntry> layers;
};

struct ModelEntry {
  std::string model_id;
  std::vector<CheckpointEntry> checkpoints;
};

struct RunManifest {
  std::vector<ModelEntry> models;
};

void validate_manifest(const RunManifest& manifest);
// Relative embedding_dir entries are resolved against the manifest's folder.
RunManifest read_manifest(const fs::path& path);
void write_manifest(const RunManifest& manifest, const fs::path& path);

// Utterance file inside a layer's embedding directory.
fs::path utterance_path(const fs::path& embedding_dir,
                        const std::string& utterance_id);

struct ProbeScore {
  std::string probe_id;
  std::string model_id;
  std::int64_t step = 0;
  std::string layer_id;
  int fold = 0;
  double score = 0.0;

  friend bool operator==(const ProbeScore&, const ProbeScore&) = default;
};

inline constexpr int kMaxFolds = 5;

void validate_score(const ProbeScore& score);
bool score_order(const ProbeScore& lhs, const ProbeScore& rhs);

extern const char* const kScoreHeader;
std::string format_score_row(const ProbeScore& score);
ProbeScore parse_score_row(const std::string& line);

// Sorted by (probe_id, model_id, step, layer_id, fold).
void write_scores(std::vector<ProbeScore> scores, const fs::path& path);
std::vector<ProbeScore> read_scores(const fs::path& path);

// Minimal RFC-4180-style helpers shared by the text formats.
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);

struct CsvDocument {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;  // 1-based source line of each row
};

CsvDocument read_csv(const fs::path& path);

// Writes to a sibling temp file and renames over `path`.
void write_text_atomic(const fs::path& path, const std::string& contents);
std::string read_text(const fs::path& path);

}  // namespace probekit
