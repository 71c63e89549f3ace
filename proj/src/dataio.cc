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

#include "probekit/dataio.h"

#include <algorithm>
#include <array>
#include <cctype>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

namespace probekit {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic = {'P', 'K', 'E', 'M', 'B', 'v', '1', '\n'};

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
         (v >> 24);
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return byteswap32(v);
}

std::string read_all_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string file_label(const fs::path& path) { return path.string(); }

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Embedding files

FrameEmbeddings read_embedding_file(const fs::path& path) {
  const std::string bytes = read_all_bytes(path);
  const std::string where = file_label(path);
  if (bytes.size() < kMagic.size() + 4 ||
      std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CorruptFileError(where + ": not an embedding file (bad magic)");
  }
  std::uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + kMagic.size(), 4);
  header_len = to_little(header_len);
  const std::size_t header_start = kMagic.size() + 4;
  if (bytes.size() < header_start + header_len) {
    throw CorruptFileError(where + ": truncated header (expected " +
                           std::to_string(header_len) + " bytes, found " +
                           std::to_string(bytes.size() - header_start) + ")");
  }

  json header;
  try {
    header = json::parse(bytes.begin() + header_start,
                         bytes.begin() + header_start + header_len);
  } catch (const json::exception& e) {
    throw CorruptFileError(where + ": header is not valid JSON: " + e.what());
  }

  FrameEmbeddings out;
  std::int64_t n_frames = 0;
  std::int64_t dim = 0;
  try {
    out.utterance_id = header.at("utterance_id").get<std::string>();
    out.layer_id = header.at("layer_id").get<std::string>();
    n_frames = header.at("n_frames").get<std::int64_t>();
    dim = header.at("dim").get<std::int64_t>();
    if (header.contains("frame_period_s")) {
      out.frame_period_s = header.at("frame_period_s").get<double>();
    }
  } catch (const json::exception& e) {
    throw CorruptFileError(where + ": bad header field: " + e.what());
  }
  if (n_frames < 1 || dim < 1) {
    throw ValidationError(where + ": n_frames and dim must be >= 1 (got " +
                          std::to_string(n_frames) + " x " +
                          std::to_string(dim) + ")");
  }
  if (!(out.frame_period_s > 0.0) || !std::isfinite(out.frame_period_s)) {
    throw ValidationError(where + ": frame_period_s must be positive");
  }

  const std::size_t payload_start = header_start + header_len;
  const std::size_t expected = static_cast<std::size_t>(n_frames) *
                               static_cast<std::size_t>(dim) * sizeof(float);
  const std::size_t actual = bytes.size() - payload_start;
  if (actual != expected) {
    throw CorruptFileError(where + ": payload size mismatch (expected " +
                           std::to_string(expected) + " bytes, found " +
                           std::to_string(actual) + ")");
  }

  out.frames.resize(n_frames, dim);
  std::memcpy(out.frames.data(), bytes.data() + payload_start, expected);
  if constexpr (std::endian::native != std::endian::little) {
    auto* words = reinterpret_cast<std::uint32_t*>(out.frames.data());
    for (std::size_t i = 0; i < expected / 4; ++i) words[i] = byteswap32(words[i]);
  }
  const float* data = out.frames.data();
  for (std::int64_t i = 0; i < n_frames * dim; ++i) {
    if (!std::isfinite(data[i])) {
      throw ValidationError(where + ": non-finite value at index " +
                            std::to_string(i) + " (frame " +
                            std::to_string(i / dim) + ", component " +
                            std::to_string(i % dim) + ")");
    }
  }
  return out;
}

void write_embedding_file(const FrameEmbeddings& embeddings,
                          const fs::path& path) {
  if (embeddings.n_frames() < 1 || embeddings.dim() < 1) {
    throw ValidationError("refusing to write empty embedding matrix");
  }
  json header = {{"utterance_id", embeddings.utterance_id},
                 {"layer_id", embeddings.layer_id},
                 {"n_frames", embeddings.n_frames()},
                 {"dim", embeddings.dim()},
                 {"frame_period_s", embeddings.frame_period_s}};
  const std::string header_text = header.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  std::uint32_t len = to_little(static_cast<std::uint32_t>(header_text.size()));
  bytes.append(reinterpret_cast<const char*>(&len), 4);
  bytes.append(header_text);
  const std::size_t payload = static_cast<std::size_t>(embeddings.frames.size()) *
                              sizeof(float);
  const std::size_t offset = bytes.size();
  bytes.resize(offset + payload);
  std::memcpy(bytes.data() + offset, embeddings.frames.data(), payload);
  if constexpr (std::endian::native != std::endian::little) {
    auto* words = reinterpret_cast<std::uint32_t*>(bytes.data() + offset);
    for (std::size_t i = 0; i < payload / 4; ++i) words[i] = byteswap32(words[i]);
  }
  write_text_atomic(path, bytes);
}

// ---------------------------------------------------------------------------
// Feature tables

std::unordered_map<std::string, int> FeatureTable::index() const {
  std::unordered_map<std::string, int> out;
  for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], static_cast<int>(i));
  return out;
}

fs::path feature_ids_path(const fs::path& path) {
  fs::path ids = path;
  ids += ".ids";
  return ids;
}

FeatureTable read_feature_table(const fs::path& path) {
  FrameEmbeddings emb = read_embedding_file(path);
  FeatureTable table;
  std::istringstream in(read_text(feature_ids_path(path)));
  std::string line;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    if (!seen.insert(line).second) {
      throw ValidationError(feature_ids_path(path).string() +
                            ": duplicate unit_id '" + line + "'");
    }
    table.ids.push_back(line);
  }
  if (static_cast<int>(table.ids.size()) != emb.n_frames()) {
    throw CorruptFileError(path.string() + ": " +
                           std::to_string(table.ids.size()) +
                           " ids for " + std::to_string(emb.n_frames()) +
                           " feature rows");
  }
  table.values = emb.frames.cast<double>();
  return table;
}

void write_feature_table(const FeatureTable& table, const fs::path& path) {
  if (static_cast<Eigen::Index>(table.ids.size()) != table.values.rows()) {
    throw ValidationError("feature table ids/rows mismatch");
  }
  FrameEmbeddings emb;
  emb.utterance_id = path.stem().string();
  emb.layer_id = "reference";
  emb.frames = table.values.cast<float>();
  write_embedding_file(emb, path);
  std::string ids;
  for (const auto& id : table.ids) ids += id + "\n";
  write_text_atomic(feature_ids_path(path), ids);
}

// ---------------------------------------------------------------------------
// CSV helpers

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  if (quoted) throw ValidationError("unterminated quote in CSV line");
  fields.push_back(std::move(field));
  return fields;
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvDocument read_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  CsvDocument doc;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    try {
      fields = split_csv_line(line);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": " + e.what());
    }
    if (!have_header) {
      for (auto& f : fields) f = trim(f);
      doc.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != doc.header.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": expected " + std::to_string(doc.header.size()) +
                            " fields, found " + std::to_string(fields.size()));
    }
    doc.rows.push_back(std::move(fields));
    doc.line_numbers.push_back(line_no);
  }
  if (!have_header) throw ValidationError(path.string() + ": missing header row");
  return doc;
}

std::string read_text(const fs::path& path) { return read_all_bytes(path); }

void write_text_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Annotations

AnnotationTable::AnnotationTable(std::vector<AnnotationRow> rows,
                                 std::vector<std::string> aux_columns)
    : rows_(std::move(rows)), aux_columns_(std::move(aux_columns)) {
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const auto& row = rows_[i];
    const std::string where = "row " + std::to_string(i + 1) + " (" + row.unit_id + ")";
    if (row.unit_id.empty()) throw ValidationError(where + ": empty unit_id");
    if (!std::isfinite(row.start_s) || !std::isfinite(row.end_s) ||
        row.start_s < 0.0 || !(row.start_s < row.end_s)) {
      throw ValidationError(where + ": invalid span [" +
                            format_double(row.start_s) + ", " +
                            format_double(row.end_s) + ")");
    }
    if (!by_id_.emplace(row.unit_id, i).second) {
      throw ValidationError(where + ": duplicate unit_id");
    }
  }
}

const AnnotationRow* AnnotationTable::find(const std::string& unit_id) const {
  auto it = by_id_.find(unit_id);
  return it == by_id_.end() ? nullptr : &rows_[it->second];
}

bool AnnotationTable::has_column(const std::string& column) const {
  return column == "label" ||
         std::find(aux_columns_.begin(), aux_columns_.end(), column) !=
             aux_columns_.end();
}

const std::string& AnnotationTable::value(const AnnotationRow& row,
                                          const std::string& column) const {
  if (column == "label") return row.label;
  auto it = row.aux_labels.find(column);
  if (it == row.aux_labels.end()) {
    throw ValidationError("unit " + row.unit_id + " has no column '" + column + "'");
  }
  return it->second;
}

AnnotationTable read_annotations(const fs::path& path) {
  const CsvDocument doc = read_csv(path);
  static const std::array<std::string, 5> kRequired = {
      "unit_id", "utterance_id", "start_s", "end_s", "label"};
  std::array<int, 5> pos{};
  for (std::size_t k = 0; k < kRequired.size(); ++k) {
    auto it = std::find(doc.header.begin(), doc.header.end(), kRequired[k]);
    if (it == doc.header.end()) {
      throw ValidationError(path.string() + ": missing required column '" +
                            kRequired[k] + "'");
    }
    pos[k] = static_cast<int>(it - doc.header.begin());
  }
  std::vector<std::string> aux;
  std::vector<int> aux_pos;
  for (std::size_t c = 0; c < doc.header.size(); ++c) {
    if (std::find(kRequired.begin(), kRequired.end(), doc.header[c]) ==
        kRequired.end()) {
      aux.push_back(doc.header[c]);
      aux_pos.push_back(static_cast<int>(c));
    }
  }

  std::vector<AnnotationRow> rows;
  rows.reserve(doc.rows.size());
  std::set<std::string> seen;
  for (std::size_t r = 0; r < doc.rows.size(); ++r) {
    const auto& f = doc.rows[r];
    const std::string where =
        path.string() + ":" + std::to_string(doc.line_numbers[r]);
    AnnotationRow row;
    row.unit_id = trim(f[pos[0]]);
    row.utterance_id = trim(f[pos[1]]);
    try {
      row.start_s = parse_double(f[pos[2]]);
      row.end_s = parse_double(f[pos[3]]);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    row.label = f[pos[4]];
    for (std::size_t a = 0; a < aux.size(); ++a) row.aux_labels[aux[a]] = f[aux_pos[a]];
    if (row.unit_id.empty()) throw ValidationError(where + ": empty unit_id");
    if (row.start_s < 0.0 || !(row.start_s < row.end_s)) {
      throw ValidationError(where + ": start_s must satisfy 0 <= start_s < end_s");
    }
    if (!seen.insert(row.unit_id).second) {
      throw ValidationError(where + ": duplicate unit_id '" + row.unit_id + "'");
    }
    rows.push_back(std::move(row));
  }
  return AnnotationTable(std::move(rows), std::move(aux));
}

void write_annotations(const AnnotationTable& table, const fs::path& path) {
  std::string out = "unit_id,utterance_id,start_s,end_s,label";
  for (const auto& c : table.aux_columns()) out += "," + csv_escape(c);
  out += "\n";
  for (const auto& row : table.rows()) {
    out += csv_escape(row.unit_id) + "," + csv_escape(row.utterance_id) + "," +
           format_double(row.start_s) + "," + format_double(row.end_s) + "," +
           csv_escape(row.label);
    for (const auto& c : table.aux_columns()) {
      auto it = row.aux_labels.find(c);
      out += "," + csv_escape(it == row.aux_labels.end() ? std::string() : it->second);
    }
    out += "\n";
  }
  write_text_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Parses

void validate_tree(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n < 1) throw ValidationError("tree must have at least one node");
  if (static_cast<int>(edges.size()) != n - 1) {
    throw ValidationError("tree over " + std::to_string(n) + " nodes needs " +
                          std::to_string(n - 1) + " edges, found " +
                          std::to_string(edges.size()));
  }
  std::vector<int> parent(n);
  for (int i = 0; i < n; ++i) parent[i] = i;
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (auto [i, j] : edges) {
    if (i < 0 || j < 0 || i >= n || j >= n) {
      throw ValidationError("edge (" + std::to_string(i) + "," +
                            std::to_string(j) + ") out of range [0," +
                            std::to_string(n) + ")");
    }
    int ri = find(i);
    int rj = find(j);
    if (ri == rj) {
      throw ValidationError("edge (" + std::to_string(i) + "," +
                            std::to_string(j) + ") closes a cycle");
    }
    parent[ri] = rj;
  }
}

std::vector<ParseRecord> read_parses(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<ParseRecord> out;
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    ParseRecord rec;
    try {
      json doc = json::parse(line);
      rec.sentence_id = doc.at("sentence_id").get<std::string>();
      rec.words = doc.at("words").get<std::vector<std::string>>();
      for (const auto& e : doc.at("edges")) {
        if (!e.is_array() || e.size() != 2) {
          throw ValidationError("edge must be a [i, j] pair");
        }
        rec.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
      }
    } catch (const json::exception& e) {
      throw ValidationError(where + ": bad parse record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    try {
      validate_tree(static_cast<int>(rec.words.size()), rec.edges);
    } catch (const ValidationError& e) {
      throw ValidationError(where + " (" + rec.sentence_id + "): " + e.what());
    }
    if (!seen.insert(rec.sentence_id).second) {
      throw ValidationError(where + ": duplicate sentence_id '" + rec.sentence_id + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void write_parses(const std::vector<ParseRecord>& parses, const fs::path& path) {
  std::string out;
  for (const auto& p : parses) {
    json edges = json::array();
    for (auto [i, j] : p.edges) edges.push_back({i, j});
    json doc = {{"sentence_id", p.sentence_id}, {"words", p.words}, {"edges", edges}};
    out += doc.dump() + "\n";
  }
  write_text_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Manifests

void validate_manifest(const RunManifest& manifest) {
  std::set<std::string> models;
  for (const auto& model : manifest.models) {
    if (model.model_id.empty()) throw ValidationError("manifest: empty model_id");
    if (!models.insert(model.model_id).second) {
      throw ValidationError("manifest: duplicate model_id '" + model.model_id + "'");
    }
    for (std::size_t c = 0; c < model.checkpoints.size(); ++c) {
      const auto& ckpt = model.checkpoints[c];
      if (c > 0 && ckpt.step <= model.checkpoints[c - 1].step) {
        throw ValidationError("manifest: steps of model '" + model.model_id +
                              "' must be strictly increasing");
      }
      std::set<std::string> layers;
      for (const auto& layer : ckpt.layers) {
        if (!layers.insert(layer.layer_id).second) {
          throw ValidationError("manifest: duplicate layer_id '" + layer.layer_id +
                                "' in model '" + model.model_id + "' step " +
                                std::to_string(ckpt.step));
        }
      }
    }
  }
}

RunManifest read_manifest(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = path.parent_path();
  RunManifest manifest;
  try {
    for (const auto& m : doc.at("models")) {
      ModelEntry model;
      model.model_id = m.at("model_id").get<std::string>();
      for (const auto& c : m.at("checkpoints")) {
        CheckpointEntry ckpt;
        ckpt.step = c.at("step").get<std::int64_t>();
        for (const auto& l : c.at("layers")) {
          LayerEntry layer;
          layer.layer_id = l.at("layer_id").get<std::string>();
          fs::path dir = l.at("embedding_dir").get<std::string>();
          layer.embedding_dir = dir.is_absolute() ? dir : base / dir;
          ckpt.layers.push_back(std::move(layer));
        }
        model.checkpoints.push_back(std::move(ckpt));
      }
      manifest.models.push_back(std::move(model));
    }
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": bad manifest: " + e.what());
  }
  validate_manifest(manifest);
  return manifest;
}

void write_manifest(const RunManifest& manifest, const fs::path& path) {
  json models = json::array();
  for (const auto& model : manifest.models) {
    json ckpts = json::array();
    for (const auto& c : model.checkpoints) {
      json layers = json::array();
      for (const auto& l : c.layers) {
        layers.push_back({{"layer_id", l.layer_id},
                          {"embedding_dir", l.embedding_dir.generic_string()}});
      }
      ckpts.push_back({{"step", c.step}, {"layers", layers}});
    }
    models.push_back({{"model_id", model.model_id}, {"checkpoints", ckpts}});
  }
  write_text_atomic(path, json{{"models", models}}.dump(2) + "\n");
}

fs::path utterance_path(const fs::path& embedding_dir,
                        const std::string& utterance_id) {
  return embedding_dir / (utterance_id + ".emb");
}

// ---------------------------------------------------------------------------
// Scores

const char* const kScoreHeader = "probe_id,model_id,step,layer_id,fold,score";

void validate_score(const ProbeScore& score) {
  if (score.fold < 0 || score.fold >= kMaxFolds) {
    throw ValidationError("fold " + std::to_string(score.fold) +
                          " outside [0," + std::to_string(kMaxFolds) + ")");
  }
  if (!std::isfinite(score.score)) {
    throw ValidationError("non-finite score for probe " + score.probe_id);
  }
}

bool score_order(const ProbeScore& lhs, const ProbeScore& rhs) {
  return std::tie(lhs.probe_id, lhs.model_id, lhs.step, lhs.layer_id, lhs.fold) <
         std::tie(rhs.probe_id, rhs.model_id, rhs.step, rhs.layer_id, rhs.fold);
}

std::string format_score_row(const ProbeScore& s) {
  return csv_escape(s.probe_id) + "," + csv_escape(s.model_id) + "," +
         std::to_string(s.step) + "," + csv_escape(s.layer_id) + "," +
         std::to_string(s.fold) + "," + format_double(s.score);
}

ProbeScore parse_score_row(const std::string& line) {
  auto f = split_csv_line(line);
  if (f.size() != 6) {
    throw ValidationError("score row needs 6 fields, found " + std::to_string(f.size()));
  }
  ProbeScore s;
  s.probe_id = f[0];
  s.model_id = f[1];
  s.step = parse_int(f[2]);
  s.layer_id = f[3];
  s.fold = static_cast<int>(parse_int(f[4]));
  s.score = parse_double(f[5]);
  validate_score(s);
  return s;
}

void write_scores(std::vector<ProbeScore> scores, const fs::path& path) {
  std::stable_sort(scores.begin(), scores.end(), score_order);
  std::string out = std::string(kScoreHeader) + "\n";
  for (const auto& s : scores) {
    validate_score(s);
    out += format_score_row(s) + "\n";
  }
  write_text_atomic(path, out);
}

std::vector<ProbeScore> read_scores(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || trim(line) != kScoreHeader) {
    throw ValidationError(path.string() + ": missing score header");
  }
  std::vector<ProbeScore> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse_score_row(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " +
                            e.what());
    }
  }
  return out;
}

}  // namespace probekit
