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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include <nlohmann/json.hpp>

#include "probekit/abx.h"
#include "probekit/pipeline.h"
#include "probekit/synthgen.h"

namespace probekit {

using nlohmann::json;

namespace {

constexpr double kPeriod = kDefaultFramePeriodS;
constexpr int kUnitsPerUtterance = 12;

struct SynthUnit {
  AnnotationRow row;  // utterance and times filled in by layout
  Vector signal;
  int n_frames = 3;
  int start_frame = 0;
};

struct SynthUtterance {
  std::string id;
  std::vector<int> units;  // indices into SynthProbe::units
  int n_frames = 0;
};

struct SynthProbe {
  std::string probe_id;
  double midpoint = 0.5;  // normalized step at which the signal emerges
  double peak = 0.5;      // normalized layer depth where the signal is strongest
  std::vector<SynthUnit> units;
  std::vector<SynthUtterance> utterances;
  std::vector<std::string> aux_columns;
  json config;
};

Vector gaussian_vector(int dim, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v;
}

Matrix gaussian_matrix(int rows, int cols, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

std::string numbered(const std::string& prefix, int i, int width = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*d", width, i);
  return prefix + buf;
}

SynthUnit make_unit(std::string unit_id, std::string label, Vector signal,
                    std::map<std::string, std::string> aux = {}) {
  SynthUnit u;
  u.row.unit_id = std::move(unit_id);
  u.row.label = std::move(label);
  u.row.aux_labels = std::move(aux);
  u.signal = std::move(signal);
  return u;
}

// Packs units into utterances in order, `group` units at a time, and sets
// their spans. Spans start a quarter frame late and end a quarter frame
// early, so pooling has to round.
void lay_out(SynthProbe& probe, int group, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> length(2, 4);
  for (std::size_t begin = 0; begin < probe.units.size(); begin += group) {
    SynthUtterance utt;
    utt.id = numbered(probe.probe_id + "_u", static_cast<int>(probe.utterances.size()));
    int frame = 1;
    const std::size_t end = std::min(probe.units.size(), begin + group);
    for (std::size_t i = begin; i < end; ++i) {
      SynthUnit& u = probe.units[i];
      u.n_frames = length(rng);
      u.start_frame = frame;
      u.row.utterance_id = utt.id;
      u.row.start_s = (frame + 0.25) * kPeriod;
      u.row.end_s = (frame + u.n_frames - 0.25) * kPeriod;
      frame += u.n_frames + 1;
      utt.units.push_back(static_cast<int>(i));
    }
    utt.n_frames = frame;
    probe.utterances.push_back(std::move(utt));
  }
}

void write_probe_annotations(const SynthProbe& probe, const fs::path& path) {
  std::vector<AnnotationRow> rows;
  for (const auto& u : probe.units) rows.push_back(u.row);
  write_annotations(AnnotationTable(std::move(rows), probe.aux_columns), path);
}

SynthProbe cluster_probe(const std::string& id, const std::string& preset, int n_classes,
                         int forms_per_class, int samples_per_form, int dim,
                         const std::string& form_column, std::mt19937_64& rng) {
  SynthProbe p;
  p.probe_id = id;
  const Matrix means = simplex_vertices(n_classes, dim, 6.0);
  for (int c = 0; c < n_classes; ++c) {
    const std::string label = numbered(id + "_c", c);
    for (int f = 0; f < forms_per_class; ++f) {
      const std::string form = label + numbered("f", f, 2);
      const Vector offset = form_column.empty() ? Vector::Zero(dim) : gaussian_vector(dim, 0.4, rng);
      for (int s = 0; s < samples_per_form; ++s) {
        std::map<std::string, std::string> aux;
        if (!form_column.empty()) aux[form_column] = form;
        p.units.push_back(make_unit(form + numbered("s", s, 2), label,
                                    means.row(c).transpose() + offset, std::move(aux)));
      }
    }
  }
  if (!form_column.empty()) p.aux_columns = {form_column};
  p.config = {{"kind", "cluster"}, {"preset", preset}};
  return p;
}

}  // namespace

fs::path write_synth_dataset(const fs::path& out_dir, const SynthDatasetOptions& options) {
  if (options.n_models < 1 || options.n_layers < 1 || options.steps.empty()) {
    throw ConfigError("synth dataset: need at least one model, layer and step");
  }
  if (options.dim < 24) throw ConfigError("synth dataset: dim must be at least 24");
  for (std::size_t i = 1; i < options.steps.size(); ++i) {
    if (options.steps[i] <= options.steps[i - 1]) {
      throw ConfigError("synth dataset: steps must be strictly increasing");
    }
  }
  const int dim = options.dim;
  std::mt19937_64 rng(SeedHasher(options.seed).add("synth-dataset").value());

  std::vector<SynthProbe> probes;
  probes.push_back(cluster_probe("phones", "phones", 12, 1, 10, dim, "", rng));
  probes.push_back(cluster_probe("syllable_forms", "syllable_forms", 15, 1, 8, dim, "", rng));
  probes.push_back(
      cluster_probe("syllable_types", "syllable_types", 5, 5, 4, dim, "syllable_form", rng));
  probes.push_back(cluster_probe("word_forms", "word_forms", 20, 1, 6, dim, "", rng));
  probes.push_back(cluster_probe("pos", "pos", 4, 6, 3, dim, "word_form", rng));

  constexpr int kRefDim = 12;
  std::vector<FeatureTable> references;
  {
    SynthProbe p;
    p.probe_id = "acoustic";
    const Matrix map = gaussian_matrix(dim, kRefDim, 1.0 / std::sqrt(kRefDim), rng);
    FeatureTable ref;
    ref.values.resize(120, kRefDim);
    for (int i = 0; i < 120; ++i) {
      const Vector r = gaussian_vector(kRefDim, 1.0, rng).array() + 1.0;
      ref.ids.push_back(numbered("ac", i));
      ref.values.row(i) = r.transpose();
      p.units.push_back(make_unit(ref.ids.back(), numbered("ph", i % 12, 2), 1.5 * map * r));
    }
    p.config = {{"kind", "rsa"}, {"preset", "acoustic"}, {"reference", "data/acoustic_ref.emb"}};
    references.push_back(std::move(ref));
    probes.push_back(std::move(p));
  }
  {
    SynthProbe p;
    p.probe_id = "semantic";
    p.aux_columns = {"pos", "word_form"};
    const Matrix map = gaussian_matrix(dim, kRefDim, 1.0 / std::sqrt(kRefDim), rng);
    FeatureTable ref;
    const std::vector<std::pair<std::string, int>> groups = {
        {"NOUN", 6}, {"ADV", 3}, {"ADJ", 3}, {"VERB", 3}};
    int n = 0;
    for (const auto& [pos, forms] : groups) {
      for (int f = 0; f < forms; ++f) {
        const std::string form = pos + numbered("_w", f, 2);
        const Vector meaning = gaussian_vector(kRefDim, 1.0, rng).array() + 0.5;
        for (int s = 0; s < 4; ++s) {
          const Vector r = meaning + gaussian_vector(kRefDim, 0.2, rng);
          ref.ids.push_back(numbered("se", n++));
          ref.values.conservativeResize(n, kRefDim);
          ref.values.row(n - 1) = r.transpose();
          p.units.push_back(make_unit(ref.ids.back(), form, 1.5 * map * r,
                                      {{"pos", pos}, {"word_form", form}}));
        }
      }
    }
    p.config = {{"kind", "rsa"}, {"preset", "semantic"}, {"reference", "data/semantic_ref.emb"}};
    references.push_back(std::move(ref));
    probes.push_back(std::move(p));
  }

  std::vector<AbxTriplet> triplets;
  {
    SynthProbe p;
    p.probe_id = "homophones";
    p.aux_columns = {"phonetic"};
    for (int t = 0; t < 50; ++t) {
      const std::string key = numbered("hp", t);
      const Vector phon = gaussian_vector(dim, 0.6, rng);
      const Vector mean_a = gaussian_vector(dim, 0.5, rng);
      const Vector mean_b = gaussian_vector(dim, 0.5, rng);
      AbxTriplet tr;
      tr.triplet_id = numbered("t", t);
      tr.phonetic_key = key;
      tr.a_meaning_key = key + "_a";
      tr.b_meaning_key = key + "_b";
      tr.a_id = key + "_A";
      tr.b_id = key + "_B";
      tr.x_id = key + "_X";
      p.units.push_back(make_unit(tr.a_id, tr.a_meaning_key, phon + mean_a, {{"phonetic", key}}));
      p.units.push_back(make_unit(tr.b_id, tr.b_meaning_key, phon + mean_b, {{"phonetic", key}}));
      p.units.push_back(make_unit(tr.x_id, tr.a_meaning_key, phon + mean_a, {{"phonetic", key}}));
      triplets.push_back(std::move(tr));
    }
    p.config = {{"kind", "abx"}, {"preset", "homophones"}, {"triplets", "data/homophones_triplets.csv"}};
    probes.push_back(std::move(p));
  }

  std::vector<ParseRecord> parses;
  {
    SynthProbe p;
    p.probe_id = "syntax";
    std::uniform_int_distribution<int> length(4, 8);
    for (int s = 0; s < 40; ++s) {
      const int n = length(rng);
      const EdgeList edges = random_tree(n, rng);
      const Matrix coords = mds_embed_tree(n, edges, dim);
      ParseRecord rec;
      rec.sentence_id = numbered("s", s);
      rec.edges = edges;
      for (int w = 0; w < n; ++w) {
        const std::string id = rec.sentence_id + numbered("_w", w, 2);
        rec.words.push_back(id);
        p.units.push_back(make_unit(id, numbered("tok", w, 2), 2.0 * coords.row(w).transpose()));
      }
      parses.push_back(std::move(rec));
    }
    p.config = {{"kind", "structural"},
                {"preset", "syntax"},
                {"parses", "data/syntax_parses.jsonl"},
                {"structural",
                 {{"rank_k", 16}, {"learning_rate", 0.01}, {"max_epochs", 30}, {"batch_size", 8}}}};
    probes.push_back(std::move(p));
  }

  const std::vector<std::pair<double, double>> schedule = {
      {0.2, 0.2}, {0.35, 0.4}, {0.5, 0.5}, {0.5, 0.7}, {0.6, 0.8},
      {0.4, 0.3}, {0.7, 0.9}, {0.55, 0.6}, {0.75, 0.7}};
  for (std::size_t i = 0; i < probes.size(); ++i) {
    probes[i].midpoint = schedule[i].first;
    probes[i].peak = schedule[i].second;
  }

  // Sentences keep their own utterance; everything else is packed.
  for (auto& p : probes) {
    if (p.probe_id == "syntax") {
      std::size_t at = 0;
      for (const auto& rec : parses) {
        const int n = static_cast<int>(rec.words.size());
        std::vector<SynthUnit> slice(p.units.begin() + static_cast<long>(at),
                                     p.units.begin() + static_cast<long>(at) + n);
        SynthProbe tmp;
        tmp.probe_id = "syntax_" + rec.sentence_id;
        tmp.units = std::move(slice);
        lay_out(tmp, n, rng);
        tmp.utterances.front().id = "syntax_" + rec.sentence_id;
        for (int w = 0; w < n; ++w) {
          tmp.units[w].row.utterance_id = tmp.utterances.front().id;
          p.units[at + w] = tmp.units[w];
        }
        SynthUtterance utt = tmp.utterances.front();
        for (auto& idx : utt.units) idx += static_cast<int>(at);
        p.utterances.push_back(std::move(utt));
        at += n;
      }
    } else {
      lay_out(p, kUnitsPerUtterance, rng);
    }
  }

  const fs::path data_dir = out_dir / "data";
  fs::create_directories(data_dir);
  for (const auto& p : probes) write_probe_annotations(p, data_dir / (p.probe_id + ".csv"));
  write_feature_table(references[0], data_dir / "acoustic_ref.emb");
  write_feature_table(references[1], data_dir / "semantic_ref.emb");
  write_triplets(triplets, data_dir / "homophones_triplets.csv");
  write_parses(parses, data_dir / "syntax_parses.jsonl");

  RunManifest manifest;
  const double first = static_cast<double>(options.steps.front());
  const double span = static_cast<double>(options.steps.back()) - first;
  for (int m = 0; m < options.n_models; ++m) {
    ModelEntry model;
    model.model_id = numbered("model_", m, 2);
    const double model_gain = 1.0 + 0.15 * m;
    for (std::int64_t step : options.steps) {
      CheckpointEntry ckpt;
      ckpt.step = step;
      const double t = span > 0.0 ? (static_cast<double>(step) - first) / span : 1.0;
      for (int l = 0; l < options.n_layers; ++l) {
        LayerEntry layer;
        layer.layer_id = numbered("L", l, 2);
        char step_dir[32];
        std::snprintf(step_dir, sizeof step_dir, "step_%07lld", static_cast<long long>(step));
        const fs::path rel = fs::path("embeddings") / model.model_id / step_dir / layer.layer_id;
        layer.embedding_dir = rel;
        fs::create_directories(out_dir / rel);
        const double depth = options.n_layers > 1 ? static_cast<double>(l) / (options.n_layers - 1) : 0.5;

        for (const auto& p : probes) {
          const double emerge = 0.15 + 0.85 / (1.0 + std::exp(-8.0 * (t - p.midpoint)));
          const double gap = depth - p.peak;
          const double layer_gain = 0.3 + 0.7 * std::exp(-gap * gap / (2.0 * 0.3 * 0.3));
          const double alpha = 2.0 * model_gain * emerge * layer_gain;
          for (const auto& utt : p.utterances) {
            std::mt19937_64 noise_rng(SeedHasher(options.seed)
                                          .add(model.model_id)
                                          .add(step)
                                          .add(layer.layer_id)
                                          .add(utt.id)
                                          .value());
            std::normal_distribution<double> normal(0.0, 1.0);
            Matrix frames(utt.n_frames, dim);
            for (int r = 0; r < utt.n_frames; ++r) {
              for (int c = 0; c < dim; ++c) frames(r, c) = normal(noise_rng);
            }
            for (int idx : utt.units) {
              const SynthUnit& u = p.units[idx];
              for (int r = 0; r < u.n_frames; ++r) {
                frames.row(u.start_frame + r) += alpha * u.signal.transpose();
              }
            }
            FrameEmbeddings emb;
            emb.utterance_id = utt.id;
            emb.layer_id = layer.layer_id;
            emb.frame_period_s = kPeriod;
            emb.frames = frames.cast<float>();
            write_embedding_file(emb, utterance_path(out_dir / rel, utt.id));
          }
        }
        ckpt.layers.push_back(std::move(layer));
      }
      model.checkpoints.push_back(std::move(ckpt));
    }
    manifest.models.push_back(std::move(model));
  }
  write_manifest(manifest, out_dir / "manifest.json");

  json config;
  config["manifest"] = "manifest.json";
  config["n_folds"] = 5;
  config["seed"] = options.seed;
  config["out_dir"] = "results";
  config["probes"] = json::array();
  for (const auto& p : probes) {
    json entry = p.config;
    entry["probe_id"] = p.probe_id;
    entry["annotations"] = "data/" + p.probe_id + ".csv";
    if (p.probe_id == "homophones") entry["meaning_column"] = "label";
    config["probes"].push_back(std::move(entry));
  }
  const fs::path config_path = out_dir / "config.json";
  write_text_atomic(config_path, config.dump(2) + "\n");
  return config_path;
}

}  // namespace probekit
