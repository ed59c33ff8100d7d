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

// Acceptance harness: one PASS/FAIL line per criterion.
//
//   vialscan_acceptance [--workdir DIR] [--only 1,3,7] [--cli PATH] [--configs DIR]
//
// Exit status is 0 only if every selected criterion passes.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "vialscan/aggregation.hpp"
#include "vialscan/error.hpp"
#include "vialscan/metrics.hpp"
#include "vialscan/network.hpp"
#include "vialscan/perlin.hpp"
#include "vialscan/pipeline.hpp"
#include "vialscan/scoring.hpp"
#include "vialscan/synthkit.hpp"
#include "vialscan/training.hpp"

namespace fs = std::filesystem;
using namespace vialscan;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Env {
  fs::path workdir;
  fs::path cli;
  fs::path configs;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

int run_cli(const Env& env, const std::string& args, const fs::path& log) {
  const std::string cmd = "\"" + env.cli.string() + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) raise(ErrorCode::kIo, "cannot open " + p.string());
  return nlohmann::json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome ssim_oracle(const Env&) {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Image x = oracle::random_image(64, 64, rng);
    const Image y = oracle::random_image(64, 64, rng);
    worst = std::max(worst, std::abs(ssim(x, y) - oracle::naive_ssim(x, y)));
  }
  return {worst <= 1e-6, "max |ssim - naive| = " + fmt(worst) + " over 50 pairs (tol 1e-6)"};
}

Outcome gradient_checks(const Env&) {
  bool pass = true;
  std::string detail;
  for (auto term : {gradcheck::Term::kAdv, gradcheck::Term::kCon, gradcheck::Term::kEnc, gradcheck::Term::kNse}) {
    const auto r = gradcheck::check(term, 100, 202);
    pass = pass && r.pass_rate() >= 0.95;
    detail += std::string(gradcheck::term_name(term)) + " " + std::to_string(r.passed) + "/" +
              std::to_string(r.sampled) + " ";
  }
  return {pass, detail + "within 1e-3 relative (need >= 95% each)"};
}

Outcome perturbation_contract(const Env&) {
  std::mt19937_64 rng(303);
  const Image x = oracle::random_image(64, 64, rng);
  const PerlinParams params;  // q = 0.75
  int applied = 0;
  double beta_sum = 0.0;
  double worst = 0.0;
  bool binary = true;
  for (int i = 0; i < 10000; ++i) {
    const auto p = perturb(x, params, rng);
    if (p.applied) {
      ++applied;
      beta_sum += p.beta;
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double m = p.mask.pixels()[k];
      const double n = p.noise.pixels()[k];
      const double xv = x.pixels()[k];
      binary = binary && (m == 0.0 || m == 1.0) && (m == 1.0 || n == 0.0);
      const double want = (1 - m) * xv + (1 - p.beta) * m * xv + p.beta * n;
      worst = std::max(worst, std::abs(want - p.x_star.pixels()[k]));
    }
  }
  const double rate = applied / 10000.0;
  const double beta_mean = applied > 0 ? beta_sum / applied : 0.0;
  const bool pass = worst <= 1e-6 && rate >= 0.72 && rate <= 0.78 && beta_mean >= 0.73 && beta_mean <= 0.77 && binary;
  return {pass, "identity err " + fmt(worst) + ", rate " + fmt(rate) + ", beta mean " + fmt(beta_mean) +
                    (binary ? ", masks binary" : ", NON-BINARY mask")};
}

Outcome full_shapes(const Env&) {
  torch::NoGradGuard no_grad;
  const NetworkConfig config;  // production shape
  auto models = make_models(config, 404);
  auto& g = models.generator;
  g->eval();
  bool pass = true;
  std::string detail;
  for (int batch : {1, 2, 32}) {
    const int chunk = std::min(batch, 8);
    bool ok = true;
    for (int start = 0; start < batch; start += chunk) {
      const auto x = torch::rand({chunk, 1, 256, 256});
      const auto enc = g->encode(x);
      const auto x_hat = g->decode(enc.z);
      ok = ok && enc.embedding.sizes() == torch::IntArrayRef({chunk, 1024, 16, 16});
      ok = ok && enc.z.sizes() == torch::IntArrayRef({chunk, 64});
      ok = ok && x_hat.sizes() == torch::IntArrayRef({chunk, 1, 256, 256});
      ok = ok && x_hat.min().item<float>() >= 0.0f && x_hat.max().item<float>() <= 1.0f;
    }
    pass = pass && ok;
    detail += "B=" + std::to_string(batch) + (ok ? " ok " : " BAD ");
  }
  return {pass, detail + "(256 -> 16x16x1024 -> 64 -> 256x256x1 in [0,1])"};
}

PipelineConfig load_config(const Env& env, const std::string& name) {
  return PipelineConfig::load(env.configs / name);
}

Outcome smoke_training(const Env& env) {
  const auto config = load_config(env, "smoke.json");
  const fs::path kit = env.workdir / "smoke_kit";
  fs::remove_all(kit);
  const auto manifest = build_kit(kit, config.counts, config.spec, 505);
  const PatchSet patches = load_training_patches(kit, manifest, config.patch_size, config.train_on_ranked);
  TrainConfig t = config.training;
  t.max_steps = 500;
  FitResult r;
  try {
    r = fit(patches, t, FitOptions{env.workdir / "smoke_run", nullptr, {}});
  } catch (const Error& e) {
    return {false, e.what()};
  }
  if (r.steps.size() < 500) return {false, "only " + std::to_string(r.steps.size()) + " steps ran"};
  double first = 0.0, last = 0.0;
  bool finite = true;
  for (const auto& s : r.steps) finite = finite && std::isfinite(s.total);
  for (std::size_t i = 0; i < 10; ++i) {
    first += r.steps[i].total / 10.0;
    last += r.steps[r.steps.size() - 10 + i].total / 10.0;
  }
  const double reduction = 1.0 - last / first;
  return {finite && reduction >= 0.30, std::to_string(patches.size()) + " patches, 500 steps: mean total " +
                                           fmt(first) + " -> " + fmt(last) + " (" + fmt(100 * reduction) +
                                           "% reduction, need >= 30%)"};
}

Outcome end_to_end(const Env& env) {
  const fs::path config = env.configs / "desk.json";
  const fs::path kit = env.workdir / "desk_kit";
  const fs::path run = env.workdir / "desk_run";
  const fs::path cal = env.workdir / "desk_cal";
  const fs::path eval = env.workdir / "desk_eval";
  const auto c = "\"" + config.string() + "\"";
  struct Step {
    std::string name;
    std::string args;
  };
  const std::vector<Step> steps = {
      {"gen-data", "gen-data --config " + c + " --out \"" + kit.string() + "\" --seed 606 --quiet"},
      {"train", "train --config " + c + " --data \"" + kit.string() + "\" --out \"" + run.string() + "\" --quiet"},
      {"calibrate", "calibrate --checkpoint \"" + (run / "model.ckpt").string() + "\" --data \"" + kit.string() +
                        "\" --out \"" + cal.string() + "\" --quiet"},
      {"evaluate", "evaluate --checkpoint \"" + (run / "model.ckpt").string() + "\" --thresholds \"" +
                       cal.string() + "\" --data \"" + kit.string() + "\" --out \"" + eval.string() + "\" --quiet"}};
  fs::remove_all(kit);
  fs::remove_all(run);
  for (const auto& s : steps) {
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run_cli(env, s.args, env.workdir / ("desk_" + s.name + ".log"));
    const double minutes =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    std::cerr << "  [6] " << s.name << " exit " << rc << " after " << fmt(minutes) << " min\n";
    if (rc != 0) return {false, s.name + " exited with " + std::to_string(rc)};
  }
  const double strip = read_json(eval / "report_strip.json")["balanced_accuracy"].get<double>();
  const double runs = read_json(eval / "report_run.json")["balanced_accuracy"].get<double>();
  const double patch = read_json(eval / "report_patch.json")["balanced_accuracy"].get<double>();
  return {strip >= 0.90 && runs >= 0.95, "balanced accuracy patch " + fmt(patch) + ", strip " + fmt(strip) +
                                             " (need >= 0.90), run " + fmt(runs) + " (need >= 0.95)"};
}

Outcome aggregation_oracles(const Env&) {
  std::mt19937_64 rng(707);
  std::uniform_real_distribution<double> score(0.0, 0.06);
  std::uniform_real_distribution<double> thr(0.01, 0.06);
  int strip_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    StripAcquisition a{"s", 0, {}};
    std::vector<std::pair<int, double>> rs;
    for (int f = 0; f < kTestFrames; ++f) {
      for (int v = 0; v < kVialsPerStrip; ++v) {
        for (int r = 0; r < kRegionsPerVial; ++r) {
          const double s = score(rng);
          a.patches.push_back({{"s", 0, f, v, r}, s, false});
          rs.emplace_back(r, s);
        }
      }
    }
    RegionThresholds t{{thr(rng), thr(rng), thr(rng), thr(rng)}};
    // Every tenth instance puts a score exactly on its threshold.
    if (i % 10 == 0) {
      t.values[static_cast<std::size_t>(a.patches[5].id.region)] = a.patches[5].score;
    }
    strip_ok += strip_decision(a, t).reject == oracle::strip_rejects(rs, t.values.data()) ? 1 : 0;
  }
  int run_ok = 0;
  int run_total = 0;
  auto check_run = [&](const std::vector<bool>& runs, bool truth) {
    ++run_total;
    run_ok += run_decision("s", runs, truth).correct == oracle::product_correct(runs, truth) ? 1 : 0;
  };
  std::bernoulli_distribution coin(0.5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<bool> runs(10);
    for (std::size_t k = 0; k < 10; ++k) runs[k] = coin(rng);
    check_run(runs, coin(rng));
  }
  bool boundary = true;
  for (bool truth : {false, true}) {
    for (int agree : {6, 7}) {
      std::vector<bool> runs(10, !truth);
      for (int k = 0; k < agree; ++k) runs[static_cast<std::size_t>(k)] = truth;
      std::shuffle(runs.begin(), runs.end(), rng);
      check_run(runs, truth);
      boundary = boundary && run_decision("s", runs, truth).correct == (agree == 7);
    }
  }
  const bool pass = strip_ok == 1000 && run_ok == run_total && boundary;
  return {pass, "strip " + std::to_string(strip_ok) + "/1000, run " + std::to_string(run_ok) + "/" +
                    std::to_string(run_total) + ", 7-of-10 boundary " + (boundary ? "ok" : "WRONG")};
}

Outcome timing_harness(const Env& env) {
  const fs::path out = env.workdir / "bench";
  const int rc = run_cli(env, "bench --budget-ms 500 --batches 20 --seed 808 --out \"" + out.string() + "\"",
                         env.workdir / "bench.log");
  if (!fs::exists(out / "bench.json")) return {false, "bench exited with " + std::to_string(rc) + ", no report"};
  const auto j = read_json(out / "bench.json");
  const auto& inf = j["inference"];
  const double mean = inf["mean_batch_ms"].get<double>();
  const double frame = inf["mean_frame_ms"].get<double>();
  const double p99 = inf["p99_batch_ms"].get<double>();
  const bool exact = frame == mean / 60.0;
  return {rc == 0 && exact && p99 <= 500.0, "toy model, 20 batches of 60: mu_tb " + fmt(mean) + " ms, mu_tf " +
                                                fmt(frame) + " ms (" + (exact ? "= mu_tb/60" : "MISMATCH") +
                                                "), p99 " + fmt(p99) + " ms, exit " + std::to_string(rc)};
}

Outcome determinism(const Env& env) {
  const auto config = load_config(env, "smoke.json");
  KitCounts small;
  small.train = 2;
  small.train_runs = 1;
  small.cal_defective = small.cal_nominal = 1;
  small.test_defective = small.test_nominal = 1;
  small.eval_runs = 2;
  const fs::path a = env.workdir / "det_kit_a";
  const fs::path b = env.workdir / "det_kit_b";
  fs::remove_all(a);
  fs::remove_all(b);
  build_kit(a, small, config.spec, 909, 1);
  build_kit(b, small, config.spec, 909, 2);
  std::size_t files = 0, same = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    const fs::path other = b / fs::relative(e.path(), a);
    same += fs::exists(other) && slurp(e.path()) == slurp(other) ? 1 : 0;
  }

  const auto manifest = KitManifest::load(a);
  const PatchSet patches = load_training_patches(a, manifest, config.patch_size, true);
  TrainConfig t = config.training;
  t.max_steps = 100;
  t.seed = 910;
  auto telemetry = [&](const fs::path& dir) {
    std::ostringstream out;
    TelemetrySink sink(out);
    fit(patches, t, FitOptions{dir, &sink, {}});
    return out.str();
  };
  const std::string ta = telemetry(env.workdir / "det_run_a");
  const std::string tb = telemetry(env.workdir / "det_run_b");
  std::size_t lines = 0;
  for (char ch : ta) lines += ch == '\n' ? 1 : 0;
  const bool kit_same = files > 0 && same == files;
  const bool tel_same = !ta.empty() && ta == tb;
  return {kit_same && tel_same, "kit " + std::to_string(same) + "/" + std::to_string(files) +
                                    " files identical; telemetry (" + std::to_string(lines) + " lines, 100 steps) " +
                                    (tel_same ? "identical" : "DIFFERS")};
}

Outcome calibration_sweep(const Env&) {
  std::mt19937_64 rng(1010);
  std::uniform_real_distribution<double> lo(0.001, 0.02);
  std::uniform_real_distribution<double> hi(0.03, 0.08);
  std::vector<LabeledScore> separable;
  for (int r = 0; r < kRegionsPerVial; ++r) {
    for (int i = 0; i < 40; ++i) separable.push_back({r, i % 2 ? hi(rng) : lo(rng), i % 2 == 1});
  }
  const auto t = calibrate_thresholds(separable);
  double worst_ba = 1.0;
  for (int r = 0; r < kRegionsPerVial; ++r) {
    std::vector<double> nom, def;
    for (const auto& s : separable) {
      if (s.region == r) (s.defective ? def : nom).push_back(s.score);
    }
    worst_ba = std::min(worst_ba, oracle::balanced_accuracy(nom, def, t.at(r)));
  }
  int matched = 0;
  std::uniform_int_distribution<int> count(1, 30);
  std::uniform_real_distribution<double> u(0.0, 0.1);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> nom(static_cast<std::size_t>(count(rng))), def(static_cast<std::size_t>(count(rng)));
    for (auto& s : nom) s = u(rng);
    for (auto& s : def) s = u(rng) + 0.02;
    if (k % 4 == 0) def[0] = nom[0];  // shared score across classes
    const auto ours = sweep_threshold(nom, def);
    const auto ref = oracle::exhaustive_threshold(nom, def);
    matched += ours.threshold == ref.threshold && ours.balanced_accuracy == ref.balanced_accuracy ? 1 : 0;
  }
  return {worst_ba == 1.0 && matched == 100,
          "separable balanced accuracy " + fmt(worst_ba) + ", exhaustive oracle agreement " + std::to_string(matched) + "/100"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vialscan acceptance checks"};
  Env env;
  std::string workdir = "acceptance_work";
  std::string cli = VIALSCAN_CLI_PATH;
  std::string configs = VIALSCAN_CONFIG_DIR;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--cli", cli, "vialscan-cli executable");
  app.add_option("--configs", configs, "Directory with desk.json and smoke.json");
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  env.workdir = fs::absolute(workdir);
  env.cli = cli;
  env.configs = configs;
  fs::create_directories(env.workdir);
  torch::set_num_threads(1);

  const std::vector<std::pair<std::string, std::function<Outcome(const Env&)>>> criteria = {
      {"ssim oracle equivalence", ssim_oracle},
      {"gradient checks", gradient_checks},
      {"perturbation contract", perturbation_contract},
      {"shape pipeline", full_shapes},
      {"smoke training", smoke_training},
      {"end-to-end synthetic kit", end_to_end},
      {"aggregation oracles", aggregation_oracles},
      {"timing harness", timing_harness},
      {"determinism", determinism},
      {"threshold calibration", calibration_sweep}};
  const std::set<int> selected(only.begin(), only.end());
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(env);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    std::cout << "criterion " << id << ' ' << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
              << o.detail << " (" << fmt(secs) << " s)" << std::endl;
  }
  return all ? 0 : 1;
}
