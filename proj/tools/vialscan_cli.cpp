// Copyright 2026 The vialscan Authors
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

// vialscan: command-line front end over the C API.
//
// Exit codes: 0 success, 1 data/model/config failure, 2 usage error,
// 3 inference slot budget exceeded (bench).

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "vialscan.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitBudget = 3;

struct Flags {
  std::string config;
  std::string data;
  std::string checkpoint;
  std::string thresholds;
  std::string out;
  std::string level;
  uint64_t seed = 0;
  int threads = 1;
  double budget_ms = 500.0;
  int batches = 20;
  int64_t max_steps = 0;
  bool quiet = false;
};

int finish(vs_status status, char* summary) {
  if (summary != nullptr) {
    std::cout << summary << '\n';
    vs_free_string(summary);
  }
  if (status == VS_OK) return 0;
  std::cerr << "vialscan: " << vs_last_error() << '\n';
  if (status == VS_ERR_BUDGET) return kExitBudget;
  if (status == VS_ERR_ARGUMENT) return kExitUsage;
  return kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vialscan: reconstruction-based vial strip inspection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", vs_version());
  Flags f;
  bool seed_given = false;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--threads", f.threads, "Worker thread cap")->check(CLI::PositiveNumber);
    cmd->add_option_function<uint64_t>(
        "--seed",
        [&](const uint64_t& s) {
          f.seed = s;
          seed_given = true;
        },
        "Random seed");
    cmd->add_flag("--quiet", f.quiet, "No progress output");
  };

  auto* gen = app.add_subcommand("gen-data", "Render a synthetic strip kit");
  gen->add_option("--config", f.config, "Pipeline config (kit section)")->check(CLI::ExistingFile);
  gen->add_option("--out", f.out, "Kit root")->required();
  common(gen);

  auto* train = app.add_subcommand("train", "Train generator and discriminator on a kit's nominal images");
  train->add_option("--config", f.config, "Pipeline config")->required()->check(CLI::ExistingFile);
  train->add_option("--data", f.data, "Kit root")->required()->check(CLI::ExistingDirectory);
  train->add_option("--out", f.out, "Checkpoint and telemetry directory")->required();
  train->add_option("--max-steps", f.max_steps, "Stop after this many steps")->check(CLI::NonNegativeNumber);
  common(train);

  auto* cal = app.add_subcommand("calibrate", "Fit per-region thresholds on the calibration split");
  cal->add_option("--checkpoint", f.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  cal->add_option("--data", f.data, "Kit root")->required()->check(CLI::ExistingDirectory);
  cal->add_option("--out", f.out, "Thresholds directory")->required();
  common(cal);

  auto* infer = app.add_subcommand("infer", "Classify one acquisition and write heatmaps for rejected patches");
  infer->add_option("--checkpoint", f.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--thresholds", f.thresholds, "Thresholds file or directory")->required()->check(CLI::ExistingPath);
  infer->add_option("--data", f.data, "Run directory with frame_*.png")->required()->check(CLI::ExistingDirectory);
  infer->add_option("--config", f.config, "Pipeline config (strip layout)")->check(CLI::ExistingFile);
  infer->add_option("--out", f.out, "Output directory")->required();
  common(infer);

  auto* eval = app.add_subcommand("evaluate", "Score the test split and report patch/strip/run metrics");
  eval->add_option("--checkpoint", f.checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--thresholds", f.thresholds, "Thresholds file or directory")->required()->check(CLI::ExistingPath);
  eval->add_option("--data", f.data, "Kit root")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--out", f.out, "Report directory")->required();
  eval->add_option("--level", f.level, "patch, strip or run (default: all)")
      ->check(CLI::IsMember({"patch", "strip", "run"}));
  common(eval);

  auto* bench = app.add_subcommand("bench", "Time 60-patch batches against the acquisition slot");
  bench->add_option("--checkpoint", f.checkpoint, "Model checkpoint (default: initialized toy model)")
      ->check(CLI::ExistingFile);
  bench->add_option("--config", f.config, "Pipeline config whose network is initialized")->check(CLI::ExistingFile);
  bench->add_option("--data", f.data, "Kit root to draw a real acquisition from")->check(CLI::ExistingDirectory);
  bench->add_option("--budget-ms", f.budget_ms, "Slot budget for the p99 batch time")->check(CLI::PositiveNumber);
  bench->add_option("--batches", f.batches, "Timed batches")->check(CLI::PositiveNumber);
  bench->add_option("--out", f.out, "Report directory");
  common(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  vs_options o;
  vs_options_init(&o);
  auto c_str = [](const std::string& s) { return s.empty() ? nullptr : s.c_str(); };
  o.config = c_str(f.config);
  o.data = c_str(f.data);
  o.checkpoint = c_str(f.checkpoint);
  o.thresholds = c_str(f.thresholds);
  o.out = c_str(f.out);
  o.level = c_str(f.level);
  o.seed = f.seed;
  o.has_seed = seed_given ? 1 : 0;
  o.threads = f.threads;
  o.budget_ms = f.budget_ms;
  o.batches = f.batches;
  o.max_steps = f.max_steps;
  o.quiet = f.quiet ? 1 : 0;

  char* summary = nullptr;
  vs_status status = VS_OK;
  if (*gen) status = vs_gen_data(&o, &summary);
  else if (*train) status = vs_train(&o, &summary);
  else if (*cal) status = vs_calibrate(&o, &summary);
  else if (*infer) status = vs_infer(&o, &summary);
  else if (*eval) status = vs_evaluate(&o, &summary);
  else if (*bench) status = vs_bench(&o, &summary);
  return finish(status, summary);
}
