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

#include "vialscan/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& group : opt.param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

double checked(const torch::Tensor& t, const char* term, std::int64_t step) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) {
    raise(ErrorCode::kTrainingFault,
          std::string("loss term '") + term + "' is not finite at step " + std::to_string(step));
  }
  return v;
}

std::unique_ptr<torch::optim::Adam> make_adam(torch::nn::Module& module, const TrainConfig& c) {
  return std::make_unique<torch::optim::Adam>(
      module.parameters(),
      torch::optim::AdamOptions(c.learning_rate).betas({c.adam_beta1, c.adam_beta2}));
}

}  // namespace

// --- configuration ------------------------------------------------------------

void LossWeights::validate() const {
  for (double w : {w_a, w_b, w1, w2, w3, w4}) {
    if (!(w >= 0.0)) raise(ErrorCode::kConfig, "loss weights must be non-negative");
  }
}

nlohmann::json LossWeights::to_json() const {
  return {{"w_a", w_a}, {"w_b", w_b}, {"w1", w1}, {"w2", w2}, {"w3", w3}, {"w4", w4}};
}

LossWeights LossWeights::from_json(const nlohmann::json& j) {
  LossWeights w;
  w.w_a = j.value("w_a", w.w_a);
  w.w_b = j.value("w_b", w.w_b);
  w.w1 = j.value("w1", w.w1);
  w.w2 = j.value("w2", w.w2);
  w.w3 = j.value("w3", w.w3);
  w.w4 = j.value("w4", w.w4);
  w.validate();
  return w;
}

void TrainConfig::validate() const {
  network.validate();
  weights.validate();
  perlin.validate();
  ssim.validate();
  if (!(learning_rate > 0.0)) raise(ErrorCode::kConfig, "learning rate must be positive");
  if (restart_period < 0) raise(ErrorCode::kConfig, "restart period must be >= 0");
  if (!(restart_factor > 0.0 && restart_factor <= 1.0)) {
    raise(ErrorCode::kConfig, "restart factor must lie in (0,1]");
  }
  if (batch_size < 1) raise(ErrorCode::kConfig, "batch size must be >= 1");
  if (epochs < 1) raise(ErrorCode::kConfig, "epochs must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    raise(ErrorCode::kConfig, "validation fraction must lie in [0,1)");
  }
  if (!(huber_delta > 0.0)) raise(ErrorCode::kConfig, "huber delta must be positive");
  if (threads < 1) raise(ErrorCode::kConfig, "threads must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"network", network.to_json()},
          {"weights", weights.to_json()},
          {"perlin", perlin.to_json()},
          {"ssim", ssim.to_json()},
          {"huber_delta", huber_delta},
          {"learning_rate", learning_rate},
          {"restart_period", restart_period},
          {"restart_factor", restart_factor},
          {"adam_beta1", adam_beta1},
          {"adam_beta2", adam_beta2},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"max_steps", max_steps},
          {"validation_fraction", validation_fraction},
          {"validation_limit", validation_limit},
          {"augment", augment},
          {"seed", seed},
          {"threads", threads}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("network")) c.network = NetworkConfig::from_json(j.at("network"));
    if (j.contains("weights")) c.weights = LossWeights::from_json(j.at("weights"));
    if (j.contains("perlin")) c.perlin = PerlinParams::from_json(j.at("perlin"));
    if (j.contains("ssim")) c.ssim = SsimParams::from_json(j.at("ssim"));
    c.huber_delta = j.value("huber_delta", c.huber_delta);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.restart_period = j.value("restart_period", c.restart_period);
    c.restart_factor = j.value("restart_factor", c.restart_factor);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    c.validation_limit = j.value("validation_limit", c.validation_limit);
    c.augment = j.value("augment", c.augment);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open training config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j.contains("training") ? j.at("training") : j);
}

// --- schedule -------------------------------------------------------------------

double lr_at(std::int64_t step, double initial_lr, std::int64_t period, double restart_factor) {
  if (step < 0) raise(ErrorCode::kRange, "negative step");
  if (period < 1) raise(ErrorCode::kConfig, "restart period must be >= 1");
  const std::int64_t cycle = step / period;
  const double t = static_cast<double>(step % period) / static_cast<double>(period);
  const double peak = initial_lr * std::pow(restart_factor, static_cast<double>(cycle));
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * t));
}

double lr_at(std::int64_t step, const TrainConfig& config) {
  return lr_at(step, config.learning_rate, std::max<std::int64_t>(1, config.restart_period),
               config.restart_factor);
}

// --- batches --------------------------------------------------------------------

torch::Tensor to_tensor(const std::vector<Image>& images, torch::Dtype dtype) {
  if (images.empty()) raise(ErrorCode::kDimension, "empty image batch");
  const int w = images.front().width();
  const int h = images.front().height();
  auto out = torch::empty({static_cast<int64_t>(images.size()), 1, h, w}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const auto& img : images) {
    if (img.width() != w || img.height() != h) raise(ErrorCode::kDimension, "mixed image sizes in batch");
    std::copy(img.pixels().begin(), img.pixels().end(), dst);
    dst += img.size();
  }
  return dtype == torch::kFloat32 ? out : out.to(dtype);
}

std::vector<Image> to_images(const torch::Tensor& batch) {
  if (batch.dim() != 4 || batch.size(1) != 1) raise(ErrorCode::kDimension, "expected [B,1,H,W]");
  const auto t = batch.detach().to(torch::kFloat32).contiguous();
  const int h = static_cast<int>(t.size(2));
  const int w = static_cast<int>(t.size(3));
  const float* src = t.data_ptr<float>();
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(t.size(0)));
  const std::size_t n = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (int64_t b = 0; b < t.size(0); ++b) {
    out.push_back(Image::clamped(w, h, std::vector<float>(src + b * n, src + (b + 1) * n)));
  }
  return out;
}

PerturbedBatch pack_batch(const std::vector<Image>& clean,
                          const std::vector<PerturbationResult>& perturbed, torch::Dtype dtype) {
  if (clean.size() != perturbed.size()) raise(ErrorCode::kDimension, "batch component counts differ");
  std::vector<Image> stars, masks, noises;
  std::vector<double> betas;
  PerturbedBatch b;
  for (const auto& p : perturbed) {
    stars.push_back(p.x_star);
    masks.push_back(p.mask);
    noises.push_back(p.noise);
    betas.push_back(p.beta);
    b.applied.push_back(p.applied);
  }
  b.x = to_tensor(clean, dtype);
  b.x_star = to_tensor(stars, dtype);
  b.mask = to_tensor(masks, dtype);
  b.noise = to_tensor(noises, dtype);
  b.beta = torch::tensor(betas, torch::TensorOptions().dtype(torch::kFloat64)).to(dtype);
  return b;
}

PerturbedBatch prepare_batch(const std::vector<Image>& patches, const TrainConfig& config,
                             std::mt19937_64& rng) {
  std::vector<Image> clean;
  std::vector<PerturbationResult> perturbed;
  clean.reserve(patches.size());
  perturbed.reserve(patches.size());
  for (const auto& p : patches) {
    Image img = config.augment ? apply_augment(p, draw_augment(rng)) : p;
    perturbed.push_back(perturb(img, config.perlin, rng));
    clean.push_back(std::move(img));
  }
  return pack_batch(clean, perturbed);
}

// --- losses ---------------------------------------------------------------------

GeneratorPass run_generator(const PerturbedBatch& batch, ModelPair& models) {
  GeneratorPass pass;
  const Reconstruction rec = models.generator->forward(batch.x_star);
  pass.x_hat = rec.x_hat;
  pass.z = rec.z;
  pass.z_hat = rec.z_hat;
  pass.features_real = models.discriminator->forward(batch.x).features;
  pass.features_fake = models.discriminator->forward(rec.x_hat).features;
  return pass;
}

LossTerms generator_loss_terms(const PerturbedBatch& batch, const GeneratorPass& pass,
                               const LossWeights& weights, const SsimParams& ssim,
                               double huber_delta) {
  LossTerms t;
  t.adv = l2(pass.features_real, pass.features_fake);
  t.con = weights.w_a * huber(batch.x, pass.x_hat, huber_delta) +
          weights.w_b * ssim_loss(batch.x, pass.x_hat, ssim);
  t.enc = l1(pass.z, pass.z_hat);
  const auto beta = batch.beta.view({-1, 1, 1, 1});
  const auto residual =
      ((1.0 - beta) * batch.mask * pass.x_hat - batch.mask * batch.x_star).abs();
  t.nse = weights.w4 * l2(residual, beta * batch.noise);
  t.total = weights.w1 * t.adv + weights.w2 * t.con + weights.w3 * t.enc + t.nse;
  return t;
}

LossTerms generator_loss(const PerturbedBatch& batch, ModelPair& models, const LossWeights& weights,
                         const SsimParams& ssim, double huber_delta) {
  return generator_loss_terms(batch, run_generator(batch, models), weights, ssim, huber_delta);
}

torch::Tensor discriminator_loss_from_logits(const torch::Tensor& real_logit,
                                             const torch::Tensor& fake_logit) {
  const auto real = torch::binary_cross_entropy_with_logits(real_logit, torch::ones_like(real_logit));
  const auto fake = torch::binary_cross_entropy_with_logits(fake_logit, torch::zeros_like(fake_logit));
  return 0.5 * (real + fake);
}

torch::Tensor discriminator_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                                 Discriminator& discriminator) {
  return discriminator_loss_from_logits(discriminator->forward(x).logit,
                                        discriminator->forward(x_hat).logit);
}

// --- telemetry ------------------------------------------------------------------

nlohmann::json StepRecord::to_json() const {
  return {{"step", step}, {"total", total}, {"adv", adv}, {"con", con},      {"enc", enc},
          {"nse", nse},   {"disc", disc},   {"lr", lr},   {"perturbed", perturbed}};
}

void TelemetrySink::write(const nlohmann::json& record) {
  std::lock_guard<std::mutex> lock(mutex_);
  out_ << record.dump() << '\n';
  out_.flush();
}

// --- trainer --------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& config, ModelPair models, std::int64_t restart_period)
    : config_(config), models_(std::move(models)), period_(std::max<std::int64_t>(1, restart_period)) {
  config_.validate();
  models_.generator->train();
  models_.discriminator->train();
  gen_opt_ = make_adam(*models_.generator, config_);
  disc_opt_ = make_adam(*models_.discriminator, config_);
}

Trainer::Trainer(const TrainConfig& config)
    : Trainer(config, make_models(config.network, config.seed), config.restart_period) {}

StepRecord Trainer::train_step(const std::vector<Image>& batch, std::mt19937_64& rng) {
  return train_step(prepare_batch(batch, config_, rng));
}

StepRecord Trainer::train_step(const PerturbedBatch& batch) {
  StepRecord rec;
  rec.step = step_;
  rec.lr = lr_at(step_, config_.learning_rate, period_, config_.restart_factor);
  set_lr(*gen_opt_, rec.lr);
  set_lr(*disc_opt_, rec.lr);

  gen_opt_->zero_grad();
  const GeneratorPass pass = run_generator(batch, models_);
  const LossTerms terms =
      generator_loss_terms(batch, pass, config_.weights, config_.ssim, config_.huber_delta);
  rec.adv = checked(terms.adv, "adv", step_);
  rec.con = checked(terms.con, "con", step_);
  rec.enc = checked(terms.enc, "enc", step_);
  rec.nse = checked(terms.nse, "nse", step_);
  rec.total = checked(terms.total, "total", step_);
  terms.total.backward();
  gen_opt_->step();

  disc_opt_->zero_grad();
  const auto d_loss = discriminator_loss(batch.x, pass.x_hat.detach(), models_.discriminator);
  rec.disc = checked(d_loss, "disc", step_);
  d_loss.backward();
  disc_opt_->step();

  rec.perturbed = static_cast<int>(std::count(batch.applied.begin(), batch.applied.end(), true));
  ++step_;
  return rec;
}

// --- data -----------------------------------------------------------------------

void PatchSet::add(const Image& patch) {
  if (patch.width() != patch_size_ || patch.height() != patch_size_) {
    raise(ErrorCode::kDimension, "patch is " + std::to_string(patch.width()) + "x" +
                                     std::to_string(patch.height()) + ", set holds " +
                                     std::to_string(patch_size_) + "x" + std::to_string(patch_size_));
  }
  for (float v : patch.pixels()) {
    codes_.push_back(static_cast<std::uint16_t>(std::lround(static_cast<double>(v) * 65535.0)));
  }
  ++count_;
}

Image PatchSet::get(std::size_t index) const {
  if (index >= count_) raise(ErrorCode::kRange, "patch index out of range");
  const std::size_t n = static_cast<std::size_t>(patch_size_) * static_cast<std::size_t>(patch_size_);
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = static_cast<float>(codes_[index * n + i] / 65535.0);
  }
  return Image(patch_size_, patch_size_, std::move(data));
}

DatasetSplit split_dataset(std::size_t count, double validation_fraction, std::uint64_t seed) {
  if (count == 0) raise(ErrorCode::kConfig, "dataset is empty");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::ceil(static_cast<double>(count) * validation_fraction));
  n_val = std::min(n_val, count - 1);
  DatasetSplit split;
  split.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  return split;
}

double validation_ssim(Generator& generator, const PatchSet& patches,
                       const std::vector<std::size_t>& indices, const SsimParams& params) {
  if (indices.empty()) return 0.0;
  const bool was_training = generator->is_training();
  generator->eval();
  double sum = 0.0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    std::vector<Image> clean;
    for (std::size_t i = start; i < std::min(indices.size(), start + kChunk); ++i) {
      clean.push_back(patches.get(indices[i]));
    }
    const auto recon = to_images(generator->reconstruct(to_tensor(clean)));
    for (std::size_t i = 0; i < clean.size(); ++i) sum += ssim(clean[i], recon[i], params);
  }
  generator->train(was_training);
  return sum / static_cast<double>(indices.size());
}

FitResult fit(const PatchSet& dataset, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (dataset.size() == 0) raise(ErrorCode::kConfig, "training dataset is empty");
  if (dataset.patch_size() != config.network.image_size) {
    raise(ErrorCode::kConfig, "dataset patch size does not match the network input size");
  }
  torch::set_num_threads(config.threads);

  FitResult result;
  result.split = split_dataset(dataset.size(), config.validation_fraction, config.seed);
  std::vector<std::size_t> val = result.split.validation;
  if (config.validation_limit > 0 && val.size() > static_cast<std::size_t>(config.validation_limit)) {
    val.resize(static_cast<std::size_t>(config.validation_limit));
  }
  const std::int64_t period = config.restart_period > 0
                                  ? config.restart_period
                                  : static_cast<std::int64_t>(result.split.train.size());
  Trainer trainer(config, make_models(config.network, config.seed), period);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);

  result.initial_validation_ssim =
      validation_ssim(trainer.models().generator, dataset, val, config.ssim);
  if (options.telemetry) {
    options.telemetry->write(nlohmann::json{
        {"event", "validation"}, {"epoch", 0}, {"ssim", result.initial_validation_ssim}});
  }

  std::vector<std::size_t> order = result.split.train;
  bool capped = false;
  for (int epoch = 1; epoch <= config.epochs && !capped; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      std::vector<Image> batch;
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      for (std::size_t i = start; i < stop; ++i) batch.push_back(dataset.get(order[i]));
      const StepRecord rec = trainer.train_step(batch, rng);
      result.steps.push_back(rec);
      if (options.telemetry) options.telemetry->write(rec);
      if (options.on_step) options.on_step(rec);
      if (config.max_steps > 0 && trainer.step() >= config.max_steps) {
        capped = true;
        break;
      }
    }
    const double v = validation_ssim(trainer.models().generator, dataset, val, config.ssim);
    result.validation_ssim.push_back(v);
    if (options.telemetry) {
      options.telemetry->write(nlohmann::json{{"event", "validation"}, {"epoch", epoch}, {"ssim", v}});
    }
    if (!options.checkpoint_dir.empty()) {
      CheckpointManifest m;
      m.network = config.network;
      m.step = trainer.step();
      m.epoch = epoch;
      m.extra = {{"validation_ssim", v},
                 {"restart_period", period},
                 {"learning_rate", lr_at(trainer.step(), config.learning_rate, period,
                                         config.restart_factor)},
                 {"train_patches", result.split.train.size()},
                 {"validation_patches", val.size()}};
      const auto path = options.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt");
      save_checkpoint(path, m, trainer.models());
      result.checkpoints.push_back(path);
    }
  }
  return result;
}

}  // namespace vialscan
