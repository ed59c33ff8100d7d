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

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace vialscan {

/// Architecture knobs. The defaults are the production shape: 256x256x1
/// input, four residual stages to a 16x16x1024 embedding, a 64-wide dense
/// bottleneck, and a mirrored decoder.
struct NetworkConfig {
  int image_size = 256;
  std::array<int, 4> stage_channels{128, 256, 512, 1024};
  /// Inner width of each three-convolution branch is channels / divisor.
  int branch_divisor = 4;
  int latent_dim = 64;
  std::array<int, 4> disc_channels{64, 128, 256, 512};
  int norm_groups = 8;

  /// 32x32 miniature used for gradient checks and quick tests.
  static NetworkConfig toy();

  void validate() const;
  int embedding_size() const { return image_size / 16; }
  nlohmann::json to_json() const;
  static NetworkConfig from_json(const nlohmann::json& j);
  /// FNV-1a over the canonical JSON form, as 16 hex digits.
  std::string hash() const;
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

enum class BlockKind { kA, kB, kC };

/// Pre-activation unit: GroupNorm -> ReLU -> (transposed) convolution.
class PreActConvImpl : public torch::nn::Module {
 public:
  PreActConvImpl(int in_channels, int out_channels, int groups, int stride, bool transposed);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::GroupNorm norm{nullptr};
  torch::nn::Conv2d conv{nullptr};
  torch::nn::ConvTranspose2d deconv{nullptr};
};
TORCH_MODULE(PreActConv);

/// Residual block. The branch is three 3x3 units; A adds a 1x1 projection
/// of the input, B adds the input unchanged, C resamples (stride-2 middle
/// unit) and adds a resampled 1x1 projection.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(BlockKind kind, int in_channels, int out_channels, int divisor, int groups,
                    bool decoder);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor skip(const torch::Tensor& x);

  BlockKind kind;
  bool decoder;
  torch::nn::Sequential branch{nullptr};
  torch::nn::Conv2d projection{nullptr};
};
TORCH_MODULE(ResidualBlock);

struct Encoding {
  torch::Tensor embedding;  // [B, C, S/16, S/16]
  torch::Tensor z;          // [B, latent]
};

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const NetworkConfig& config);
  Encoding forward(const torch::Tensor& x);
  /// Spatial size after each stage, for shape tracing.
  std::vector<torch::Tensor> trace(const torch::Tensor& x);
  ResidualBlock block(int stage, BlockKind kind);

  NetworkConfig config;
  std::vector<torch::nn::Sequential> stages;
  torch::nn::GroupNorm final_norm{nullptr};
  torch::nn::Linear to_latent{nullptr};
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const NetworkConfig& config);
  torch::Tensor forward(const torch::Tensor& z);
  std::vector<torch::Tensor> trace(const torch::Tensor& z);

  NetworkConfig config;
  torch::nn::Linear from_latent{nullptr};
  std::vector<torch::nn::Sequential> stages;
  torch::nn::GroupNorm head_norm{nullptr};
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(Decoder);

struct Reconstruction {
  torch::Tensor x_hat;
  torch::Tensor z;
  torch::Tensor z_hat;
};

/// Encoder -> dense bottleneck -> decoder, plus the second encoder that maps
/// the reconstruction back to latent space.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const NetworkConfig& config);

  Encoding encode(const torch::Tensor& x);
  torch::Tensor decode(const torch::Tensor& z);
  torch::Tensor reencode(const torch::Tensor& x_hat);
  Reconstruction forward(const torch::Tensor& x);

  /// Gradient-free reconstruction processed `chunk` samples at a time.
  torch::Tensor reconstruct(const torch::Tensor& x, int chunk = 8);

  void check_image_batch(const torch::Tensor& x) const;

  NetworkConfig config;
  Encoder encoder{nullptr};
  Decoder decoder{nullptr};
  Encoder reencoder{nullptr};
};
TORCH_MODULE(Generator);

struct Discrimination {
  torch::Tensor logit;        // [B]
  torch::Tensor probability;  // [B], sigmoid(logit)
  torch::Tensor features;     // output of the last convolution
};

/// Strided convolutional encoder with a dense real/fake head.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const NetworkConfig& config);
  Discrimination forward(const torch::Tensor& x);
  std::vector<int64_t> feature_shape() const;

  NetworkConfig config;
  std::vector<torch::nn::Conv2d> convs;
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(Discriminator);

/// He-normal convolution weights, zero biases, unit GroupNorm scales.
void initialize_weights(torch::nn::Module& module);

struct ModelPair {
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
};

/// Builds both networks with deterministic initialization from `seed`.
/// Seeds the global torch generator.
ModelPair make_models(const NetworkConfig& config, std::uint64_t seed,
                      torch::Dtype dtype = torch::kFloat32);

/// Flattened, named parameter list in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_parameters(torch::nn::Module& module);
std::int64_t parameter_count(torch::nn::Module& module);

}  // namespace vialscan
