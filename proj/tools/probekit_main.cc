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

// probekit command-line entry point.
//
//   probekit validate --config run.json
//   probekit run      --config run.json [--out DIR] [--seed N] [--folds K] [--jobs J] [--resume]
//   probekit report   --out DIR
//   probekit synth    --out DIR [--seed N] [--kind KIND --param name=value ...]

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "probekit/pipeline.h"
#include "probekit/synthgen.h"

namespace {

using probekit::ExitCode;

int code(ExitCode c) { return static_cast<int>(c); }

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  int jobs = 1;
  bool resume = false;
};

probekit::RunConfig load_config(const CommonFlags& flags) {
  probekit::RunConfig config = probekit::load_run_config(flags.config);
  if (!flags.out.empty()) config.out_dir = flags.out;
  if (flags.seed) config.seed = *flags.seed;
  if (flags.folds) config.n_folds = *flags.folds;
  return config;
}

int cmd_validate(const CommonFlags& flags) {
  const auto report = probekit::validate(load_config(flags));
  std::cout << report.format();
  return report.ok() ? code(ExitCode::kOk) : code(ExitCode::kValidationFailure);
}

int cmd_run(const CommonFlags& flags) {
  const auto config = load_config(flags);
  const auto report = probekit::validate(config);
  if (!report.ok()) {
    std::cerr << report.format();
    return code(ExitCode::kValidationFailure);
  }
  probekit::RunOptions options;
  options.resume = flags.resume;
  options.jobs = flags.jobs;
  options.log = [](const std::string& line) { std::cerr << line << "\n"; };
  const auto result = probekit::run(config, options);
  std::cout << result.cells_total << " cells: " << result.cells_run << " run, "
            << result.cells_skipped << " resumed, " << result.errors.size() << " failed\n";
  return code(result.exit_code);
}

int cmd_report(const CommonFlags& flags) {
  for (const auto& path : probekit::report(flags.out)) std::cout << path.string() << "\n";
  return code(ExitCode::kOk);
}

int cmd_synth(const CommonFlags& flags, const std::string& kind,
              const std::vector<std::string>& params, int models,
              const std::vector<std::int64_t>& steps, int layers, int dim) {
  const std::uint64_t seed = flags.seed.value_or(0);
  if (kind.empty()) {
    probekit::SynthDatasetOptions options;
    options.n_models = models;
    options.steps = steps;
    options.n_layers = layers;
    options.dim = dim;
    options.seed = seed;
    std::cout << probekit::write_synth_dataset(flags.out, options).string() << "\n";
    return code(ExitCode::kOk);
  }
  probekit::SynthSpec spec;
  spec.kind = probekit::parse_synth_kind(kind);
  spec.seed = seed;
  for (const auto& p : params) {
    const auto eq = p.find('=');
    if (eq == std::string::npos) {
      throw probekit::ConfigError("--param expects name=value, got '" + p + "'");
    }
    spec.params[p.substr(0, eq)] = probekit::parse_double(p.substr(eq + 1));
  }
  for (const auto& path : probekit::write_synth(spec, flags.out)) {
    std::cout << path.string() << "\n";
  }
  return code(ExitCode::kOk);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"probekit: probing hidden representations across layers and checkpoints"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string kind;
  std::vector<std::string> params;
  int models = 1;
  std::vector<std::int64_t> steps = {1000, 2000};
  int layers = 3;
  int dim = 32;

  auto add_seed_folds = [&](CLI::App* cmd) {
    cmd->add_option("--seed", flags.seed, "Base seed");
    cmd->add_option("--folds", flags.folds, "Number of folds")->check(CLI::Range(2, 5));
  };

  auto* validate = app.add_subcommand("validate", "Check a run config without running it");
  validate->add_option("--config", flags.config, "Run config (JSON)")->required();
  validate->add_option("--out", flags.out, "Output directory");
  add_seed_folds(validate);

  auto* run = app.add_subcommand("run", "Run every probe over the manifest");
  run->add_option("--config", flags.config, "Run config (JSON)")->required();
  run->add_option("--out", flags.out, "Output directory (overrides the config)");
  add_seed_folds(run);
  run->add_option("--jobs", flags.jobs, "Worker threads")->check(CLI::PositiveNumber);
  run->add_flag("--resume", flags.resume, "Keep finished cells of an earlier run");

  auto* report = app.add_subcommand("report", "Write plot-ready tables for a finished run");
  report->add_option("--out", flags.out, "Run output directory")->required();

  auto* synth = app.add_subcommand("synth", "Write synthetic data");
  synth->add_option("--out", flags.out, "Output directory")->required();
  synth->add_option("--seed", flags.seed, "Seed");
  synth->add_option("--kind", kind,
                    "Single generator: clusters, rsa_pair, abx_set, tree_corpus, sigmoid_series "
                    "(default: full study)");
  synth->add_option("--param", params, "Generator parameter name=value");
  synth->add_option("--models", models, "Models in the full study")->check(CLI::PositiveNumber);
  synth->add_option("--steps", steps, "Checkpoint steps in the full study");
  synth->add_option("--layers", layers, "Layers per checkpoint")->check(CLI::PositiveNumber);
  synth->add_option("--dim", dim, "Embedding dimension");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::kValidationFailure);
  }

  try {
    if (*validate) return cmd_validate(flags);
    if (*run) return cmd_run(flags);
    if (*report) return cmd_report(flags);
    if (*synth) return cmd_synth(flags, kind, params, models, steps, layers, dim);
  } catch (const probekit::IoError& e) {
    std::cerr << "probekit: " << e.what() << "\n";
    return code(ExitCode::kFatalIo);
  } catch (const probekit::CorruptFileError& e) {
    std::cerr << "probekit: " << e.what() << "\n";
    return code(ExitCode::kFatalIo);
  } catch (const probekit::Error& e) {
    std::cerr << "probekit: " << e.what() << "\n";
    return code(ExitCode::kValidationFailure);
  } catch (const std::exception& e) {
    std::cerr << "probekit: " << e.what() << "\n";
    return code(ExitCode::kFatalIo);
  }
  return code(ExitCode::kOk);
}
