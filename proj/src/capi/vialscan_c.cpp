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

#include "vialscan.h"

#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>

#include "vialscan/aggregation.hpp"
#include "vialscan/checkpoint.hpp"
#include "vialscan/error.hpp"
#include "vialscan/pipeline.hpp"
#include "vialscan/scoring.hpp"
#include "vialscan/synthkit.hpp"
#include "vialscan/training.hpp"

struct vs_model {
  vialscan::Generator generator = nullptr;
  std::unique_ptr<vialscan::Scorer> scorer;
};

struct vs_thresholds {
  vialscan::RegionThresholds values;
};

namespace {

namespace fs = std::filesystem;
using namespace vialscan;

thread_local std::string g_last_error;

struct MissingOption : std::runtime_error {
  using std::runtime_error::runtime_error;
};

vs_status fail(vs_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
vs_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const MissingOption& e) {
    return fail(VS_ERR_ARGUMENT, e.what());
  } catch (const Error& e) {
    return fail(static_cast<vs_status>(static_cast<int>(e.code())), e.what());
  } catch (const c10::Error& e) {
    return fail(VS_ERR_INTERNAL, std::string("tensor error: ") + e.what_without_backtrace());
  } catch (const fs::filesystem_error& e) {
    return fail(VS_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(VS_ERR_INTERNAL, e.what());
  }
}

std::string require(const char* value, const char* flag) {
  if (value == nullptr || *value == '\0') {
    throw MissingOption(std::string("missing required option ") + flag);
  }
  return value;
}

void emit(char** summary, const nlohmann::json& j) {
  if (summary == nullptr) return;
  const std::string text = j.dump(2);
  *summary = static_cast<char*>(std::malloc(text.size() + 1));
  std::memcpy(*summary, text.c_str(), text.size() + 1);
}

void apply_threads(const vs_options* o) {
  if (o->threads > 0) torch::set_num_threads(o->threads);
}

std::unique_ptr<vs_model> wrap(Generator g) {
  auto m = std::make_unique<vs_model>();
  m->generator = std::move(g);
  m->scorer = std::make_unique<Scorer>(m->generator);
  return m;
}

fs::path thresholds_path(const std::string& base, Level level) {
  const fs::path p(base);
  if (fs::is_directory(p)) return p / (std::string("thresholds_") + level_name(level) + ".json");
  return p;
}

std::vector<Level> levels_for(const vs_options* o) {
  if (o->level != nullptr && *o->level != '\0') return {parse_level(o->level)};
  return {Level::kPatch, Level::kStrip, Level::kRun};
}

nlohmann::json report_summary(const MetricsReport& r) {
  return {{"accuracy", r.counts.accuracy()},
          {"tpr", r.counts.tpr()},
          {"tnr", r.counts.tnr()},
          {"balanced_accuracy", r.counts.balanced_accuracy()},
          {"thresholds", r.thresholds.to_json()}};
}

std::function<void(std::size_t, std::size_t)> progress_printer(const vs_options* o, const char* what) {
  if (o->quiet) return {};
  return [what](std::size_t done, std::size_t total) {
    if (done == total || done % 10 == 0) std::cerr << what << ' ' << done << '/' << total << '\n';
  };
}

}  // namespace

extern "C" {

const char* vs_last_error(void) { return g_last_error.c_str(); }

const char* vs_status_name(vs_status status) {
  switch (status) {
    case VS_OK: return "ok";
    case VS_ERR_ARGUMENT: return "argument";
    case VS_ERR_BUDGET: return "budget";
    case VS_ERR_INTERNAL: return "internal";
    default: break;
  }
  const int code = static_cast<int>(status);
  if (code >= 1 && code <= 9) return error_code_name(static_cast<ErrorCode>(code));
  return "unknown";
}

const char* vs_version(void) { return "0.1.0"; }

void vs_free_string(char* s) { std::free(s); }

vs_status vs_model_load(const char* checkpoint_path, vs_model** out) {
  if (out == nullptr || checkpoint_path == nullptr) return fail(VS_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    auto loaded = load_checkpoint(checkpoint_path);
    *out = wrap(loaded.models.generator).release();
    return VS_OK;
  });
}

vs_status vs_model_create(const char* network_json, uint64_t seed, vs_model** out) {
  if (out == nullptr) return fail(VS_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    NetworkConfig config;
    if (network_json != nullptr) {
      try {
        config = NetworkConfig::from_json(nlohmann::json::parse(network_json));
      } catch (const nlohmann::json::exception& e) {
        raise(ErrorCode::kConfig, std::string("network json: ") + e.what());
      }
    }
    *out = wrap(make_models(config, seed).generator).release();
    return VS_OK;
  });
}

void vs_model_free(vs_model* model) { delete model; }

int vs_model_image_size(const vs_model* model) {
  return model == nullptr ? 0 : model->generator->config.image_size;
}

vs_status vs_model_score(vs_model* model, const float* pixels, size_t count, double* scores_out) {
  if (model == nullptr || (count > 0 && (pixels == nullptr || scores_out == nullptr))) {
    return fail(VS_ERR_ARGUMENT, "null argument");
  }
  return guarded([&] {
    const int s = vs_model_image_size(model);
    const std::size_t n = static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
    std::vector<Image> patches;
    patches.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      patches.emplace_back(s, s, std::vector<float>(pixels + i * n, pixels + (i + 1) * n));
    }
    const auto scores = model->scorer->scores(patches);
    std::copy(scores.begin(), scores.end(), scores_out);
    return VS_OK;
  });
}

vs_status vs_model_reconstruct(vs_model* model, const float* pixels, float* recon_out) {
  if (model == nullptr || pixels == nullptr || recon_out == nullptr) {
    return fail(VS_ERR_ARGUMENT, "null argument");
  }
  return guarded([&] {
    const int s = vs_model_image_size(model);
    const std::size_t n = static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
    const auto scored = model->scorer->score(Image(s, s, std::vector<float>(pixels, pixels + n)));
    std::copy(scored.reconstruction.pixels().begin(), scored.reconstruction.pixels().end(), recon_out);
    return VS_OK;
  });
}

vs_status vs_thresholds_load(const char* path, vs_thresholds** out) {
  if (out == nullptr || path == nullptr) return fail(VS_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    *out = new vs_thresholds{RegionThresholds::load(path)};
    return VS_OK;
  });
}

vs_status vs_thresholds_create(const double values[4], vs_thresholds** out) {
  if (out == nullptr || values == nullptr) return fail(VS_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    RegionThresholds t;
    std::copy(values, values + kRegionsPerVial, t.values.begin());
    t.validate();
    *out = new vs_thresholds{t};
    return VS_OK;
  });
}

void vs_thresholds_free(vs_thresholds* thresholds) { delete thresholds; }

vs_status vs_thresholds_get(const vs_thresholds* thresholds, int region, double* out) {
  if (thresholds == nullptr || out == nullptr) return fail(VS_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    *out = thresholds->values.at(region);
    return VS_OK;
  });
}

vs_status vs_classify(const vs_thresholds* thresholds, double score, int region, int* reject) {
  if (thresholds == nullptr || reject == nullptr) return fail(VS_ERR_ARGUMENT, "null argument");
  return guarded([&] {
    *reject = classify_patch(score, region, thresholds->values) ? 1 : 0;
    return VS_OK;
  });
}

void vs_options_init(vs_options* options) {
  if (options == nullptr) return;
  *options = vs_options{};
  options->threads = 1;
  options->budget_ms = 500.0;
  options->batches = 20;
}

vs_status vs_gen_data(const vs_options* o, char** summary) {
  if (o == nullptr) return fail(VS_ERR_ARGUMENT, "null options");
  return guarded([&] {
    const fs::path root = require(o->out, "--out");
    PipelineConfig config;
    if (o->config != nullptr && *o->config != '\0') config = PipelineConfig::load(o->config);
    const std::uint64_t seed = o->has_seed ? o->seed : 0;
    const auto manifest = build_kit(root, config.counts, config.spec, seed, std::max(1, o->threads));
    nlohmann::json s = {{"root", root.string()}, {"seed", seed}};
    for (const char* split : {"train", "calibration", "test"}) {
      const auto strips = manifest.split(split);
      const auto defective = std::count_if(strips.begin(), strips.end(), [](const StripRecord* r) { return r->defective; });
      s["splits"][split] = {{"strips", strips.size()}, {"defective", defective}};
    }
    emit(summary, s);
    return VS_OK;
  });
}

vs_status vs_train(const vs_options* o, char** summary) {
  if (o == nullptr) return fail(VS_ERR_ARGUMENT, "null options");
  return guarded([&] {
    PipelineConfig config = PipelineConfig::load(require(o->config, "--config"));
    const fs::path data = require(o->data, "--data");
    const fs::path out = require(o->out, "--out");
    if (o->has_seed) config.training.seed = o->seed;
    if (o->threads > 0) config.training.threads = o->threads;
    if (o->max_steps > 0) config.training.max_steps = o->max_steps;
    config.validate();
    fs::create_directories(out);
    {
      std::ofstream cfg(out / "config.json");
      cfg << config.to_json().dump(2) << '\n';
    }
    const auto manifest = KitManifest::load(data);
    const PatchSet patches = load_training_patches(data, manifest, config.patch_size, config.train_on_ranked);
    std::ofstream telemetry_file(out / "telemetry.jsonl");
    if (!telemetry_file) raise(ErrorCode::kIo, "cannot write telemetry");
    TelemetrySink telemetry(telemetry_file);
    FitOptions options;
    options.checkpoint_dir = out;
    options.telemetry = &telemetry;
    if (!o->quiet) {
      options.on_step = [](const StepRecord& r) {
        if (r.step % 50 == 0) {
          std::cerr << "step " << r.step << " total " << r.total << " con " << r.con << " disc " << r.disc
                    << " lr " << r.lr << '\n';
        }
      };
    }
    const FitResult result = fit(patches, config.training, options);
    const fs::path final_model = out / "model.ckpt";
    if (!result.checkpoints.empty()) {
      fs::copy_file(result.checkpoints.back(), final_model, fs::copy_options::overwrite_existing);
    }
    emit(summary, {{"patches", patches.size()},
                   {"train_patches", result.split.train.size()},
                   {"validation_patches", result.split.validation.size()},
                   {"steps", result.steps.size()},
                   {"initial_validation_ssim", result.initial_validation_ssim},
                   {"validation_ssim", result.validation_ssim},
                   {"model", final_model.string()}});
    return VS_OK;
  });
}

vs_status vs_calibrate(const vs_options* o, char** summary) {
  if (o == nullptr) return fail(VS_ERR_ARGUMENT, "null options");
  return guarded([&] {
    apply_threads(o);
    const auto loaded = load_checkpoint(require(o->checkpoint, "--checkpoint"));
    const fs::path data = require(o->data, "--data");
    const fs::path out = require(o->out, "--out");
    const auto manifest = KitManifest::load(data);
    const Scorer scorer(loaded.models.generator);
    const KitResults cal = score_split(scorer, data, manifest, "calibration", progress_printer(o, "calibration strips"));
    fs::create_directories(out);
    write_patch_csv(cal, out / "calibration_scores.csv");

    nlohmann::json s = {{"checkpoint", o->checkpoint}};
    std::optional<RegionThresholds> previous;
    for (Level level : {Level::kPatch, Level::kStrip, Level::kRun}) {
      const RegionThresholds t = recalibrate(cal, level, previous);
      previous = t;
      const MetricsReport r = evaluate(cal, t, level);
      t.save(thresholds_path(out.string(), level),
             {{"level", level_name(level)}, {"calibration_balanced_accuracy", r.counts.balanced_accuracy()}});
      s["levels"][level_name(level)] = report_summary(r);
    }
    emit(summary, s);
    return VS_OK;
  });
}

vs_status vs_infer(const vs_options* o, char** summary) {
  if (o == nullptr) return fail(VS_ERR_ARGUMENT, "null options");
  return guarded([&] {
    apply_threads(o);
    const auto loaded = load_checkpoint(require(o->checkpoint, "--checkpoint"));
    const fs::path run = require(o->data, "--data");
    const fs::path out = require(o->out, "--out");
    const RegionThresholds thresholds =
        RegionThresholds::load(thresholds_path(require(o->thresholds, "--thresholds"), Level::kStrip));
    const auto frames = load_run_frames(run);
    RegionLayout layout = RegionLayout::uniform(frames.front().second.width(), frames.front().second.height());
    if (o->config != nullptr && *o->config != '\0') layout = PipelineConfig::load(o->config).spec.layout();
    const Scorer scorer(loaded.models.generator);
    const std::string strip = run.parent_path().filename().string();
    int run_index = 0;
    try {
      run_index = std::stoi(run.filename().string());
    } catch (const std::exception&) {
    }
    const auto acq = acquisition_patches(frames, layout, scorer.image_size(), strip, run_index);
    auto scored = scorer.score(acq.patches, acq.ids);

    StripAcquisition a{strip, run_index, {}};
    for (const auto& p : scored) a.patches.push_back({p.id, p.score, false});
    const StripVerdict verdict = strip_decision(a, thresholds);

    fs::create_directories(out);
    nlohmann::json rejected = nlohmann::json::array();
    for (auto& p : scored) {
      if (!classify_patch(p, thresholds)) continue;
      const std::string stem = "f" + std::to_string(p.id.frame) + "_v" + std::to_string(p.id.vial) + "_r" +
                               std::to_string(p.id.region);
      save_png(*p.heatmap, out / ("heatmap_" + stem + ".png"), 8);
      save_overlay(p.input, p.reconstruction, out / ("overlay_" + stem + ".png"));
      rejected.push_back({{"frame", p.id.frame}, {"vial", p.id.vial}, {"region", p.id.region}, {"score", p.score}});
    }
    nlohmann::json j = {{"strip", strip},
                        {"run", run_index},
                        {"verdict", verdict.reject ? "reject" : "accept"},
                        {"max_score", verdict.worst.theta},
                        {"max_patch",
                         {{"frame", verdict.worst.argmax.frame},
                          {"vial", verdict.worst.argmax.vial},
                          {"region", verdict.worst.argmax.region}}},
                        {"region_max", verdict.region_max},
                        {"vial_max", verdict.vial_max},
                        {"thresholds", thresholds.to_json()},
                        {"rejected_patches", rejected}};
    std::ofstream(out / "verdict.json") << j.dump(2) << '\n';
    emit(summary, j);
    return VS_OK;
  });
}

vs_status vs_evaluate(const vs_options* o, char** summary) {
  if (o == nullptr) return fail(VS_ERR_ARGUMENT, "null options");
  return guarded([&] {
    apply_threads(o);
    const auto loaded = load_checkpoint(require(o->checkpoint, "--checkpoint"));
    const fs::path data = require(o->data, "--data");
    const fs::path out = require(o->out, "--out");
    const std::string thresholds = require(o->thresholds, "--thresholds");
    const auto levels = levels_for(o);
    std::vector<RegionThresholds> per_level;
    for (Level level : levels) per_level.push_back(RegionThresholds::load(thresholds_path(thresholds, level)));
    const auto manifest = KitManifest::load(data);
    const Scorer scorer(loaded.models.generator);
    const KitResults kit = score_split(scorer, data, manifest, "test", progress_printer(o, "test strips"));
    fs::create_directories(out);
    write_patch_csv(kit, out / "patch_scores.csv");
    nlohmann::json s = nlohmann::json::object();
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const MetricsReport r = evaluate(kit, per_level[i], levels[i]);
      r.save(out / (std::string("report_") + level_name(levels[i]) + ".json"));
      s[level_name(levels[i])] = report_summary(r);
      if (r.timing) s[level_name(levels[i])]["mean_frame_ms"] = r.timing->mean_frame_ms;
    }
    emit(summary, s);
    return VS_OK;
  });
}

vs_status vs_bench(const vs_options* o, char** summary) {
  if (o == nullptr) return fail(VS_ERR_ARGUMENT, "null options");
  vs_status budget_status = VS_OK;
  const vs_status st = guarded([&] {
    using Clock = std::chrono::steady_clock;
    apply_threads(o);
    if (!(o->budget_ms > 0.0)) raise(ErrorCode::kConfig, "--budget-ms must be positive");
    if (o->batches < 1) raise(ErrorCode::kConfig, "--batches must be >= 1");
    Generator generator = nullptr;
    std::string source;
    if (o->checkpoint != nullptr && *o->checkpoint != '\0') {
      generator = load_checkpoint(o->checkpoint).models.generator;
      source = o->checkpoint;
    } else {
      NetworkConfig net = NetworkConfig::toy();
      if (o->config != nullptr && *o->config != '\0') net = PipelineConfig::load(o->config).training.network;
      generator = make_models(net, o->has_seed ? o->seed : 0).generator;
      source = "initialized:" + net.hash();
    }
    const Scorer scorer(generator);
    const int s = scorer.image_size();
    std::mt19937_64 rng(o->has_seed ? o->seed : 0);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);

    std::vector<std::pair<int, Image>> frames;
    RegionLayout layout;
    if (o->data != nullptr && *o->data != '\0') {
      const auto manifest = KitManifest::load(o->data);
      const auto test = manifest.split("test");
      if (test.empty()) raise(ErrorCode::kData, "kit has no test strips");
      layout = manifest.spec.layout();
      frames = load_run_frames(run_dir(o->data, *test.front(), 0));
    }
    auto make_batch = [&] {
      if (!frames.empty()) return acquisition_patches(frames, layout, s, "bench", 0).patches;
      std::vector<Image> batch;
      for (int i = 0; i < kPatchesPerAcquisition; ++i) {
        std::vector<float> px(static_cast<std::size_t>(s) * s);
        for (auto& p : px) p = u(rng);
        batch.emplace_back(s, s, std::move(px));
      }
      return batch;
    };
    for (int w = 0; w < 2; ++w) scorer.scores(make_batch());  // warm-up
    std::vector<double> batch_ms, end_to_end_ms;
    for (int b = 0; b < o->batches; ++b) {
      const auto t0 = Clock::now();
      const auto batch = make_batch();
      const auto t1 = Clock::now();
      const auto scores = scorer.scores(batch);
      const auto t2 = Clock::now();
      if (scores.size() != static_cast<std::size_t>(kPatchesPerAcquisition)) {
        raise(ErrorCode::kDimension, "bench batch is not 60 patches");
      }
      batch_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
      end_to_end_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
    }
    const TimingStats stats = timing_stats(batch_ms);
    const TimingStats e2e = timing_stats(end_to_end_ms);
    const bool within = stats.p99_batch_ms <= o->budget_ms;
    nlohmann::json j = {{"model", source},
                        {"image_size", s},
                        {"patches_per_batch", kPatchesPerAcquisition},
                        {"budget_ms", o->budget_ms},
                        {"within_budget", within},
                        {"inference", stats.to_json()},
                        {"end_to_end", e2e.to_json()},
                        {"batch_ms", batch_ms}};
    if (o->out != nullptr && *o->out != '\0') {
      fs::create_directories(o->out);
      std::ofstream(fs::path(o->out) / "bench.json") << j.dump(2) << '\n';
    }
    emit(summary, j);
    if (!within) {
      budget_status = VS_ERR_BUDGET;
      g_last_error = "p99 batch time " + std::to_string(stats.p99_batch_ms) + " ms exceeds the " +
                     std::to_string(o->budget_ms) + " ms budget";
    }
    return VS_OK;
  });
  return st == VS_OK ? budget_status : st;
}

}  // extern "C"
