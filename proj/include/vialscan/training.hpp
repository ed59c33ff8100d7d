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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <ostream>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vialscan/checkpoint.hpp"
#include "vialscan/imagecore.hpp"
#include "vialscan/metrics.hpp"
#include "vialscan/network.hpp"
#include "vialscan/perlin.hpp"

namespace vialscan {

/// Generator objective weights. w_a/w_b weight the Huber and SSIM parts of
/// the contextual term; w1..w3 weight adversarial, contextual and encoder
/// terms; w4 scales the noise loss.
struct LossWeights {
  double w_a = 2.0;
  double w_b = 1.0;
  double w1 = 1.0;
  double w2 = 50.0;
  double w3 = 1.0;
  double w4 = 3.0;

  void validate() const;
  nlohmann::json to_json() const;
  static LossWeights from_json(const nlohmann::json& j);
};

struct TrainConfig {
  NetworkConfig network;
  LossWeights weights;
  PerlinParams perlin;
  SsimParams ssim;
  double huber_delta = kDefaultHuberDelta;

  double learning_rate = 1.5e-4;
  /// Steps per cosine period. 0 means "number of training patches", the
  /// ratio used by the full-scale run.
  std::int64_t restart_period = 2533680;
  double restart_factor = 1.0 / 3.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;

  int batch_size = 32;
  int epochs = 10;
  /// Stop after this many generator steps (0 = no cap).
  std::int64_t max_steps = 0;
  double validation_fraction = 0.1;
  /// Validation patches evaluated per epoch (0 = all).
  int validation_limit = 512;
  bool augment = true;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

/// Learning rate after `step` generator updates: cosine decay to zero within
/// each period, each period's peak a `restart_factor` fraction of the last.
double lr_at(std::int64_t step, double initial_lr, std::int64_t period, double restart_factor);
double lr_at(std::int64_t step, const TrainConfig& config);

/// One training batch after augmentation and perturbation. Tensors are
/// [B,1,H,W] except beta ([B]).
struct PerturbedBatch {
  torch::Tensor x;
  torch::Tensor x_star;
  torch::Tensor mask;
  torch::Tensor noise;
  torch::Tensor beta;
  std::vector<bool> applied;
};

torch::Tensor to_tensor(const std::vector<Image>& images, torch::Dtype dtype = torch::kFloat32);
std::vector<Image> to_images(const torch::Tensor& batch);

/// Augments each clean patch, then perturbs it with probability q.
PerturbedBatch prepare_batch(const std::vector<Image>& patches, const TrainConfig& config,
                             std::mt19937_64& rng);
/// Packs already-computed perturbations (no augmentation).
PerturbedBatch pack_batch(const std::vector<Image>& clean,
                          const std::vector<PerturbationResult>& perturbed,
                          torch::Dtype dtype = torch::kFloat32);

struct LossTerms {
  torch::Tensor total;
  torch::Tensor adv;  // unweighted feature-matching l2
  torch::Tensor con;  // w_a huber + w_b ssim_loss
  torch::Tensor enc;  // unweighted latent l1
  torch::Tensor nse;  // w4-scaled noise loss
};

/// Network outputs the generator objective depends on.
struct GeneratorPass {
  torch::Tensor x_hat;
  torch::Tensor z;
  torch::Tensor z_hat;
  torch::Tensor features_real;
  torch::Tensor features_fake;
};

GeneratorPass run_generator(const PerturbedBatch& batch, ModelPair& models);

/// total = w1 adv + w2 con + w3 enc + nse, with
///   nse = w4 l2(|(1-beta) M x_hat - M x_star|, beta N).
LossTerms generator_loss_terms(const PerturbedBatch& batch, const GeneratorPass& pass,
                               const LossWeights& weights, const SsimParams& ssim,
                               double huber_delta);
LossTerms generator_loss(const PerturbedBatch& batch, ModelPair& models, const LossWeights& weights,
                         const SsimParams& ssim, double huber_delta);

/// Mean of the real->1 and fake->0 binary cross-entropies.
torch::Tensor discriminator_loss_from_logits(const torch::Tensor& real_logit,
                                             const torch::Tensor& fake_logit);
torch::Tensor discriminator_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                                 Discriminator& discriminator);

struct StepRecord {
  std::int64_t step = 0;
  double total = 0.0;
  double adv = 0.0;
  double con = 0.0;
  double enc = 0.0;
  double nse = 0.0;
  double disc = 0.0;
  double lr = 0.0;
  int perturbed = 0;

  nlohmann::json to_json() const;
  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

/// Append-only line-delimited JSON telemetry.
class TelemetrySink {
 public:
  explicit TelemetrySink(std::ostream& out) : out_(out) {}
  void write(const nlohmann::json& record);
  void write(const StepRecord& record) { write(record.to_json()); }

 private:
  std::mutex mutex_;
  std::ostream& out_;
};

/// Owns the two networks and their Adam optimizers for alternating updates.
class Trainer {
 public:
  Trainer(const TrainConfig& config, ModelPair models, std::int64_t restart_period);
  explicit Trainer(const TrainConfig& config);

  /// augment -> perturb -> generator update -> discriminator update.
  StepRecord train_step(const std::vector<Image>& batch, std::mt19937_64& rng);
  /// Same, from a prepared batch.
  StepRecord train_step(const PerturbedBatch& batch);

  ModelPair& models() { return models_; }
  std::int64_t step() const { return step_; }
  std::int64_t restart_period() const { return period_; }
  const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  ModelPair models_;
  std::int64_t period_;
  std::int64_t step_ = 0;
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> disc_opt_;
};

/// Patches held as 16-bit codes to keep large training sets in memory.
class PatchSet {
 public:
  PatchSet() = default;
  explicit PatchSet(int patch_size) : patch_size_(patch_size) {}

  void add(const Image& patch);
  Image get(std::size_t index) const;
  std::size_t size() const { return count_; }
  int patch_size() const { return patch_size_; }

 private:
  int patch_size_ = 0;
  std::size_t count_ = 0;
  std::vector<std::uint16_t> codes_;
};

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Seeded shuffle, then the first ceil(n * fraction) indices validate.
DatasetSplit split_dataset(std::size_t count, double validation_fraction, std::uint64_t seed);

/// Mean SSIM between clean patches and their reconstructions.
double validation_ssim(Generator& generator, const PatchSet& patches,
                       const std::vector<std::size_t>& indices, const SsimParams& params);

struct FitOptions {
  std::filesystem::path checkpoint_dir;
  TelemetrySink* telemetry = nullptr;
  std::function<void(const StepRecord&)> on_step;
};

struct FitResult {
  std::vector<std::filesystem::path> checkpoints;
  double initial_validation_ssim = 0.0;
  std::vector<double> validation_ssim;  // one per completed epoch
  std::vector<StepRecord> steps;
  DatasetSplit split;
};

FitResult fit(const PatchSet& dataset, const TrainConfig& config, const FitOptions& options);

}  // namespace vialscan
