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

#include "vialscan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

constexpr char kMagic[8] = {'V', 'S', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) raise(ErrorCode::kModel, "truncated checkpoint");
  return v;
}

std::map<std::string, torch::Tensor> collect(ModelPair& models) {
  std::map<std::string, torch::Tensor> all;
  for (auto& [name, t] : named_parameters(*models.generator)) all["generator." + name] = t;
  for (auto& [name, t] : named_parameters(*models.discriminator)) all["discriminator." + name] = t;
  return all;
}

}  // namespace

nlohmann::json CheckpointManifest::to_json() const {
  return {{"format", 1},
          {"network", network.to_json()},
          {"config_hash", network.hash()},
          {"step", step},
          {"epoch", epoch},
          {"extra", extra}};
}

CheckpointManifest CheckpointManifest::from_json(const nlohmann::json& j) {
  CheckpointManifest m;
  try {
    m.network = NetworkConfig::from_json(j.at("network"));
    if (j.at("config_hash").get<std::string>() != m.network.hash()) {
      raise(ErrorCode::kModel, "checkpoint config hash does not match its architecture");
    }
    m.step = j.at("step").get<std::int64_t>();
    m.epoch = j.at("epoch").get<int>();
    m.extra = j.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kModel, std::string("malformed checkpoint manifest: ") + e.what());
  }
  return m;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointManifest& manifest,
                     ModelPair& models) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::kIo, "cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    const std::string text = manifest.to_json().dump();
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    const auto tensors = collect(models);
    put<std::uint64_t>(out, tensors.size());
    for (const auto& [name, tensor] : tensors) {
      const auto t = tensor.detach().contiguous().cpu();
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      std::uint8_t dtype = 0;
      if (t.scalar_type() == torch::kFloat64) {
        dtype = 1;
      } else if (t.scalar_type() != torch::kFloat32) {
        raise(ErrorCode::kModel, "unsupported tensor dtype for " + name);
      }
      put<std::uint8_t>(out, dtype);
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
      for (int64_t d = 0; d < t.dim(); ++d) put<std::int64_t>(out, t.size(d));
      const auto bytes = static_cast<std::uint64_t>(t.numel()) * t.element_size();
      put<std::uint64_t>(out, bytes);
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(bytes));
    }
    if (!out) raise(ErrorCode::kIo, "failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::kModel, "cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    raise(ErrorCode::kModel, path.string() + " is not a vialscan checkpoint");
  }
  const auto manifest_len = get<std::uint64_t>(in);
  std::string text(manifest_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) raise(ErrorCode::kModel, "truncated checkpoint manifest");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kModel, std::string("checkpoint manifest: ") + e.what());
  }
  LoadedCheckpoint loaded;
  loaded.manifest = CheckpointManifest::from_json(j);
  loaded.models = make_models(loaded.manifest.network, 0);
  auto targets = collect(loaded.models);

  const auto count = get<std::uint64_t>(in);
  if (count != targets.size()) {
    raise(ErrorCode::kModel, "checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                                 std::to_string(targets.size()));
  }
  torch::NoGradGuard no_grad;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto dtype = get<std::uint8_t>(in);
    const auto rank = get<std::uint32_t>(in);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = get<std::int64_t>(in);
    const auto bytes = get<std::uint64_t>(in);
    auto it = targets.find(name);
    if (it == targets.end()) raise(ErrorCode::kModel, "unexpected tensor " + name);
    auto& target = it->second;
    if (target.sizes().vec() != dims) raise(ErrorCode::kModel, "shape mismatch for " + name);
    const auto type = dtype == 1 ? torch::kFloat64 : torch::kFloat32;
    auto buffer = torch::empty(dims, torch::TensorOptions().dtype(type));
    if (bytes != static_cast<std::uint64_t>(buffer.numel()) * buffer.element_size()) {
      raise(ErrorCode::kModel, "byte length mismatch for " + name);
    }
    in.read(static_cast<char*>(buffer.data_ptr()), static_cast<std::streamsize>(bytes));
    if (!in) raise(ErrorCode::kModel, "truncated tensor " + name);
    target.set_data(buffer);
  }
  return loaded;
}

}  // namespace vialscan
