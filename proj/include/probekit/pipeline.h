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
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "probekit/clusterprobe.h"
#include "probekit/common.h"
#include "probekit/dataio.h"
#include "probekit/rsa.h"
#include "probekit/structprobe.h"

namespace probekit {

enum class ExitCode : int {
  kOk = 0,
  kValidationFailure = 1,
  kPartialFailure = 2,
  kFatalIo = 3,
};

enum class ProbeKind { kCluster, kRsa, kAbx, kStructural };

ProbeKind parse_probe_kind(const std::string& name);
std::string probe_kind_name(ProbeKind kind);

// One configured probe. Only the fields of its kind are used.
struct ProbeSpec {
  std::string probe_id;
  ProbeKind kind = ProbeKind::kCluster;
  std::optional<std::string> preset;
  fs::path annotations;
  std::string label_column = "label";

  ClusterProbeConfig cluster;

  fs::path reference;
  RsaConfig rsa;

  fs::path triplets;
  std::string meaning_column = "label";

  fs::path parses;
  StructProbeParams structural;
};

struct RunConfig {
  fs::path manifest_path;
  std::vector<ProbeSpec> probes;
  int n_folds = 5;
  std::uint64_t seed = 0;
  fs::path out_dir;
};

// UTF-8 JSON. Relative paths resolve against the config file's folder.
RunConfig load_run_config(const fs::path& path);

struct ValidationIssue {
  enum class Severity { kError, kWarning };
  Severity severity = Severity::kError;
  std::string path;
  std::string rule;
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationIssue> issues;

  int errors() const;
  int warnings() const;
  bool ok() const { return errors() == 0; }
  std::string format() const;
};

// Dry run: checks files, schemas and dataset designs. Writes nothing.
ValidationReport validate(const RunConfig& config);

// Seed of one (probe, model, step, layer) cell.
std::uint64_t cell_seed(std::uint64_t seed, const std::string& probe_id,
                        const std::string& model_id, std::int64_t step,
                        const std::string& layer_id);

struct RunOptions {
  bool resume = false;
  int jobs = 1;
  std::function<void(const std::string&)> log;
};

struct CellError {
  std::string probe_id;
  std::string model_id;
  std::int64_t step = 0;
  std::string layer_id;
  std::string message;
};

struct RunResult {
  int cells_total = 0;
  int cells_run = 0;
  int cells_skipped = 0;
  std::vector<CellError> errors;
  ExitCode exit_code = ExitCode::kOk;
};

// Executes every probe on every (model, checkpoint, layer), then fits the
// learning trajectories. Outputs under config.out_dir:
//   scores.csv, errors.csv, best_layers.csv, trajectories.csv,
//   manifest.json, run_info.json
// Structural probes also emit "<probe_id>/sequential" rows (probe vs chain
// parse). Throws ValidationError when validation fails.
RunResult run(const RunConfig& config, const RunOptions& options = {});

// Plot-ready tables from a finished run:
//   layerwise.csv, trajectory.csv, normalized_curves.csv, syntax_control.csv
std::vector<fs::path> report(const fs::path& out_dir);

struct SynthDatasetOptions {
  int n_models = 1;
  std::vector<std::int64_t> steps = {1000, 2000};
  int n_layers = 3;
  int dim = 32;
  std::uint64_t seed = 0;
};

// Writes a complete synthetic study (manifest, annotations, parses,
// triplets, reference spaces, per-layer embeddings, config.json) covering
// all nine probe types. Returns the config path.
fs::path write_synth_dataset(const fs::path& out_dir, const SynthDatasetOptions& options);

}  // namespace probekit
