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

#include "vialscan/network.hpp"

#include <cstdio>
#include <numeric>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

int group_count(int channels, int groups) { return std::gcd(channels, std::max(1, groups)); }

int decoder_out_channels(const NetworkConfig& c, int stage) {
  return stage < 3 ? c.stage_channels[static_cast<std::size_t>(2 - stage)]
                   : std::max(1, c.stage_channels[0] / 2);
}

std::string shape_string(const torch::Tensor& t) {
  std::string s = "[";
  for (int64_t i = 0; i < t.dim(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.size(i));
  }
  return s + "]";
}

}  // namespace

NetworkConfig NetworkConfig::toy() {
  NetworkConfig c;
  c.image_size = 32;
  c.stage_channels = {4, 4, 8, 8};
  c.branch_divisor = 1;
  c.latent_dim = 8;
  c.disc_channels = {4, 4, 8, 8};
  c.norm_groups = 2;
  return c;
}

void NetworkConfig::validate() const {
  if (image_size < 16 || image_size % 16 != 0) {
    raise(ErrorCode::kConfig, "image_size must be a positive multiple of 16");
  }
  for (std::size_t s = 0; s < stage_channels.size(); ++s) {
    if (stage_channels[s] < 1 || disc_channels[s] < 1) {
      raise(ErrorCode::kConfig, "channel counts must be positive");
    }
  }
  if (branch_divisor < 1) raise(ErrorCode::kConfig, "branch_divisor must be >= 1");
  if (latent_dim < 1) raise(ErrorCode::kConfig, "latent_dim must be >= 1");
  if (norm_groups < 1) raise(ErrorCode::kConfig, "norm_groups must be >= 1");
}

nlohmann::json NetworkConfig::to_json() const {
  return {{"image_size", image_size},     {"stage_channels", stage_channels},
          {"branch_divisor", branch_divisor}, {"latent_dim", latent_dim},
          {"disc_channels", disc_channels}, {"norm_groups", norm_groups}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  NetworkConfig c;
  try {
    c.image_size = j.value("image_size", c.image_size);
    c.stage_channels = j.value("stage_channels", c.stage_channels);
    c.branch_divisor = j.value("branch_divisor", c.branch_divisor);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.disc_channels = j.value("disc_channels", c.disc_channels);
    c.norm_groups = j.value("norm_groups", c.norm_groups);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string NetworkConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// --- building blocks --------------------------------------------------------

PreActConvImpl::PreActConvImpl(int in_channels, int out_channels, int groups, int stride,
                               bool transposed) {
  norm = register_module(
      "norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(in_channels, groups),
                                                               in_channels)));
  if (transposed) {
    auto opts = torch::nn::ConvTranspose2dOptions(in_channels, out_channels, 3)
                    .stride(stride)
                    .padding(1)
                    .output_padding(stride - 1);
    deconv = register_module("deconv", torch::nn::ConvTranspose2d(opts));
  } else {
    conv = register_module(
        "conv", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1)));
  }
}

torch::Tensor PreActConvImpl::forward(const torch::Tensor& x) {
  auto h = torch::relu(norm(x));
  return conv ? conv(h) : deconv(h);
}

ResidualBlockImpl::ResidualBlockImpl(BlockKind kind_, int in_channels, int out_channels,
                                     int divisor, int groups, bool decoder_)
    : kind(kind_), decoder(decoder_) {
  if (kind == BlockKind::kB && in_channels != out_channels) {
    raise(ErrorCode::kConfig, "identity block needs matching channel counts");
  }
  const int mid = std::max(1, out_channels / divisor);
  const int middle_stride = kind == BlockKind::kC ? 2 : 1;
  branch = register_module(
      "branch",
      torch::nn::Sequential(PreActConv(in_channels, mid, groups, 1, decoder),
                            PreActConv(mid, mid, groups, middle_stride, decoder),
                            PreActConv(mid, out_channels, groups, 1, decoder)));
  if (kind != BlockKind::kB) {
    const int skip_stride = (kind == BlockKind::kC && !decoder) ? 2 : 1;
    projection = register_module(
        "projection",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1).stride(skip_stride)));
  }
}

torch::Tensor ResidualBlockImpl::skip(const torch::Tensor& x) {
  if (kind == BlockKind::kB) return x;
  if (kind == BlockKind::kC && decoder) {
    return projection(torch::upsample_nearest2d(x, std::vector<int64_t>{x.size(2) * 2, x.size(3) * 2}));
  }
  return projection(x);
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  return branch->forward(x) + skip(x);
}

// --- encoder / decoder ------------------------------------------------------

EncoderImpl::EncoderImpl(const NetworkConfig& cfg) : config(cfg) {
  config.validate();
  int in = 1;
  for (int s = 0; s < 4; ++s) {
    const int out = config.stage_channels[static_cast<std::size_t>(s)];
    torch::nn::Sequential stage(
        ResidualBlock(BlockKind::kA, in, out, config.branch_divisor, config.norm_groups, false),
        ResidualBlock(BlockKind::kB, out, out, config.branch_divisor, config.norm_groups, false),
        ResidualBlock(BlockKind::kC, out, out, config.branch_divisor, config.norm_groups, false));
    stages.push_back(register_module("stage" + std::to_string(s), stage));
    in = out;
  }
  final_norm = register_module(
      "final_norm",
      torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(in, config.norm_groups), in)));
  const int64_t flat = static_cast<int64_t>(in) * config.embedding_size() * config.embedding_size();
  to_latent = register_module("to_latent", torch::nn::Linear(flat, config.latent_dim));
}

Encoding EncoderImpl::forward(const torch::Tensor& x) {
  torch::Tensor h = x;
  for (auto& stage : stages) h = stage->forward(h);
  Encoding e;
  e.embedding = torch::relu(final_norm(h));
  e.z = to_latent(e.embedding.flatten(1));
  return e;
}

std::vector<torch::Tensor> EncoderImpl::trace(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  torch::Tensor h = x;
  for (auto& stage : stages) {
    h = stage->forward(h);
    out.push_back(h);
  }
  return out;
}

ResidualBlock EncoderImpl::block(int stage, BlockKind kind) {
  const auto& seq = stages.at(static_cast<std::size_t>(stage));
  return ResidualBlock(seq->ptr<ResidualBlockImpl>(static_cast<std::size_t>(kind)));
}

DecoderImpl::DecoderImpl(const NetworkConfig& cfg) : config(cfg) {
  config.validate();
  const int top = config.stage_channels[3];
  const int64_t flat = static_cast<int64_t>(top) * config.embedding_size() * config.embedding_size();
  from_latent = register_module("from_latent", torch::nn::Linear(config.latent_dim, flat));
  int in = top;
  for (int s = 0; s < 4; ++s) {
    const int out = decoder_out_channels(config, s);
    torch::nn::Sequential stage(
        ResidualBlock(BlockKind::kA, in, out, config.branch_divisor, config.norm_groups, true),
        ResidualBlock(BlockKind::kB, out, out, config.branch_divisor, config.norm_groups, true),
        ResidualBlock(BlockKind::kC, out, out, config.branch_divisor, config.norm_groups, true));
    stages.push_back(register_module("stage" + std::to_string(s), stage));
    in = out;
  }
  head_norm = register_module(
      "head_norm",
      torch::nn::GroupNorm(torch::nn::GroupNormOptions(group_count(in, config.norm_groups), in)));
  head = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 3).padding(1)));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != config.latent_dim) {
    raise(ErrorCode::kDimension, "latent batch must be [B," + std::to_string(config.latent_dim) +
                                     "], got " + shape_string(z));
  }
  const int64_t e = config.embedding_size();
  torch::Tensor h = from_latent(z).view({z.size(0), config.stage_channels[3], e, e});
  for (auto& stage : stages) h = stage->forward(h);
  return torch::sigmoid(head(torch::relu(head_norm(h))));
}

std::vector<torch::Tensor> DecoderImpl::trace(const torch::Tensor& z) {
  const int64_t e = config.embedding_size();
  torch::Tensor h = from_latent(z).view({z.size(0), config.stage_channels[3], e, e});
  std::vector<torch::Tensor> out;
  for (auto& stage : stages) {
    h = stage->forward(h);
    out.push_back(h);
  }
  return out;
}

// --- generator ----------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const NetworkConfig& cfg) : config(cfg) {
  config.validate();
  encoder = register_module("encoder", Encoder(config));
  decoder = register_module("decoder", Decoder(config));
  reencoder = register_module("reencoder", Encoder(config));
}

void GeneratorImpl::check_image_batch(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(0) < 1 || x.size(1) != 1 || x.size(2) != config.image_size ||
      x.size(3) != config.image_size) {
    raise(ErrorCode::kDimension, "image batch must be [B,1," + std::to_string(config.image_size) +
                                     "," + std::to_string(config.image_size) + "], got " +
                                     shape_string(x));
  }
}

Encoding GeneratorImpl::encode(const torch::Tensor& x) {
  check_image_batch(x);
  return encoder->forward(x);
}

torch::Tensor GeneratorImpl::decode(const torch::Tensor& z) { return decoder->forward(z); }

torch::Tensor GeneratorImpl::reencode(const torch::Tensor& x_hat) {
  check_image_batch(x_hat);
  return reencoder->forward(x_hat).z;
}

Reconstruction GeneratorImpl::forward(const torch::Tensor& x) {
  Reconstruction r;
  r.z = encode(x).z;
  r.x_hat = decode(r.z);
  r.z_hat = reencode(r.x_hat);
  return r;
}

torch::Tensor GeneratorImpl::reconstruct(const torch::Tensor& x, int chunk) {
  check_image_batch(x);
  torch::NoGradGuard no_grad;
  if (chunk < 1) chunk = 1;
  std::vector<torch::Tensor> parts;
  for (int64_t start = 0; start < x.size(0); start += chunk) {
    const auto piece = x.slice(0, start, std::min<int64_t>(start + chunk, x.size(0)));
    parts.push_back(decoder->forward(encoder->forward(piece).z));
  }
  return torch::cat(parts, 0);
}

// --- discriminator ------------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const NetworkConfig& cfg) : config(cfg) {
  config.validate();
  int in = 1;
  for (int s = 0; s < 4; ++s) {
    const int out = config.disc_channels[static_cast<std::size_t>(s)];
    convs.push_back(register_module(
        "conv" + std::to_string(s),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1))));
    in = out;
  }
  const auto shape = feature_shape();
  head = register_module("head", torch::nn::Linear(shape[0] * shape[1] * shape[2], 1));
}

std::vector<int64_t> DiscriminatorImpl::feature_shape() const {
  const int64_t side = config.image_size / 16;
  return {config.disc_channels[3], side, side};
}

Discrimination DiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != 1 || x.size(2) != config.image_size ||
      x.size(3) != config.image_size) {
    raise(ErrorCode::kDimension, "discriminator input must be [B,1," +
                                     std::to_string(config.image_size) + "," +
                                     std::to_string(config.image_size) + "], got " +
                                     shape_string(x));
  }
  torch::Tensor h = x;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = convs[i](h);
    if (i + 1 < convs.size()) h = torch::leaky_relu(h, 0.2);
  }
  Discrimination d;
  d.features = h;
  d.logit = head(torch::leaky_relu(h, 0.2).flatten(1)).squeeze(1);
  d.probability = torch::sigmoid(d.logit);
  return d;
}

// --- helpers ------------------------------------------------------------------

void initialize_weights(torch::nn::Module& module) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/true)) {
    if (auto* c = m->as<torch::nn::Conv2dImpl>()) {
      torch::nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* d = m->as<torch::nn::ConvTranspose2dImpl>()) {
      torch::nn::init::kaiming_normal_(d->weight, 0.0, torch::kFanIn, torch::kReLU);
      if (d->bias.defined()) d->bias.zero_();
    } else if (auto* l = m->as<torch::nn::LinearImpl>()) {
      torch::nn::init::xavier_normal_(l->weight);
      l->bias.zero_();
    } else if (auto* g = m->as<torch::nn::GroupNormImpl>()) {
      g->weight.fill_(1.0);
      g->bias.zero_();
    }
  }
}

ModelPair make_models(const NetworkConfig& config, std::uint64_t seed, torch::Dtype dtype) {
  config.validate();
  torch::manual_seed(seed);
  ModelPair pair;
  pair.generator = Generator(config);
  pair.discriminator = Discriminator(config);
  initialize_weights(*pair.generator);
  initialize_weights(*pair.discriminator);
  pair.generator->to(dtype);
  pair.discriminator->to(dtype);
  return pair;
}

std::vector<std::pair<std::string, torch::Tensor>> named_parameters(torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    out.emplace_back(item.key(), item.value());
  }
  return out;
}

std::int64_t parameter_count(torch::nn::Module& module) {
  std::int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

}  // namespace vialscan
