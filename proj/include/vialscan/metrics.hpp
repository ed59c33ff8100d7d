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

#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "vialscan/imagecore.hpp"

namespace vialscan {

/// Gaussian-window SSIM settings. Windows are evaluated without padding
/// ("valid"); inputs smaller than `window` use the largest odd window that
/// fits.
struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const;
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
  int effective_window(int height, int width) const;

  nlohmann::json to_json() const;
  static SsimParams from_json(const nlohmann::json& j);
};

inline constexpr double kDefaultHuberDelta = 1.0;

/// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_taps(int size, double sigma);

// Image evaluators (double precision, separable windows).

double ssim(const Image& x, const Image& y, const SsimParams& params = {});
double ssim_loss(const Image& x, const Image& y, const SsimParams& params = {});
/// Mean contrast-structure factor (the SSIM product without the luminance
/// term).
double ssim_contrast_structure(const Image& x, const Image& y, const SsimParams& params = {});
double huber(const Image& x, const Image& y, double delta = kDefaultHuberDelta);
double l1(const Image& x, const Image& y);
double l2(const Image& x, const Image& y);

// Differentiable tensor forms. Image tensors are [B, 1, H, W]; every loss
// reduces by mean.

torch::Tensor ssim_per_sample(const torch::Tensor& x, const torch::Tensor& y,
                              const SsimParams& params = {});
torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimParams& params = {});
torch::Tensor ssim_loss(const torch::Tensor& x, const torch::Tensor& y,
                        const SsimParams& params = {});
torch::Tensor huber(const torch::Tensor& x, const torch::Tensor& y,
                    double delta = kDefaultHuberDelta);
torch::Tensor l1(const torch::Tensor& x, const torch::Tensor& y);
torch::Tensor l2(const torch::Tensor& x, const torch::Tensor& y);

}  // namespace vialscan
