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

#include "vialscan/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

void require_same(const Image& x, const Image& y) {
  if (!x.same_shape(y)) {
    raise(ErrorCode::kDimension, std::to_string(x.width()) + "x" + std::to_string(x.height()) +
                                     " vs " + std::to_string(y.width()) + "x" +
                                     std::to_string(y.height()));
  }
}

void require_same(const torch::Tensor& x, const torch::Tensor& y) {
  if (x.sizes() != y.sizes()) raise(ErrorCode::kDimension, "tensor shapes differ");
}

// Valid-mode separable filtering of a w x h plane with `taps`.
std::vector<double> filter_valid(const std::vector<double>& src, int w, int h,
                                 const std::vector<double>& taps) {
  const int k = static_cast<int>(taps.size());
  const int ow = w - k + 1;
  const int oh = h - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += taps[t] * src[static_cast<std::size_t>(y) * w + x + t];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += taps[t] * rows[static_cast<std::size_t>(y + t) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

struct SsimMeans {
  double ssim = 0.0;
  double cs = 0.0;
};

SsimMeans ssim_means(const Image& x, const Image& y, const SsimParams& params) {
  require_same(x, y);
  params.validate();
  const int w = x.width();
  const int h = x.height();
  const int k = params.effective_window(h, w);
  const auto taps = gaussian_taps(k, params.sigma);
  const std::size_t n = x.size();
  std::vector<double> xs(n), ys(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = x.pixels()[i];
    ys[i] = y.pixels()[i];
    xx[i] = xs[i] * xs[i];
    yy[i] = ys[i] * ys[i];
    xy[i] = xs[i] * ys[i];
  }
  const auto mx = filter_valid(xs, w, h, taps);
  const auto my = filter_valid(ys, w, h, taps);
  const auto exx = filter_valid(xx, w, h, taps);
  const auto eyy = filter_valid(yy, w, h, taps);
  const auto exy = filter_valid(xy, w, h, taps);
  const double c1 = params.c1();
  const double c2 = params.c2();
  SsimMeans acc;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = exx[i] - mx[i] * mx[i];
    const double vy = eyy[i] - my[i] * my[i];
    const double cov = exy[i] - mx[i] * my[i];
    const double lum = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
    const double cs = (2.0 * cov + c2) / (vx + vy + c2);
    acc.ssim += lum * cs;
    acc.cs += cs;
  }
  acc.ssim /= static_cast<double>(mx.size());
  acc.cs /= static_cast<double>(mx.size());
  return acc;
}

}  // namespace

void SsimParams::validate() const {
  if (window < 1 || window % 2 == 0) raise(ErrorCode::kConfig, "SSIM window must be odd");
  if (!(sigma > 0.0)) raise(ErrorCode::kConfig, "SSIM sigma must be positive");
  if (!(k1 > 0.0 && k2 > 0.0)) raise(ErrorCode::kConfig, "SSIM K1, K2 must be positive");
  if (!(dynamic_range > 0.0)) raise(ErrorCode::kConfig, "SSIM dynamic range must be positive");
}

int SsimParams::effective_window(int height, int width) const {
  int k = std::min({window, height, width});
  if (k % 2 == 0) --k;
  if (k < 1) raise(ErrorCode::kDimension, "image too small for SSIM");
  return k;
}

nlohmann::json SsimParams::to_json() const {
  return {{"window", window}, {"sigma", sigma}, {"k1", k1}, {"k2", k2},
          {"dynamic_range", dynamic_range}};
}

SsimParams SsimParams::from_json(const nlohmann::json& j) {
  SsimParams p;
  p.window = j.value("window", p.window);
  p.sigma = j.value("sigma", p.sigma);
  p.k1 = j.value("k1", p.k1);
  p.k2 = j.value("k2", p.k2);
  p.dynamic_range = j.value("dynamic_range", p.dynamic_range);
  p.validate();
  return p;
}

std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double center = 0.5 * (size - 1);
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    taps[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[static_cast<std::size_t>(i)];
  }
  for (double& t : taps) t /= total;
  return taps;
}

double ssim(const Image& x, const Image& y, const SsimParams& params) {
  return ssim_means(x, y, params).ssim;
}

double ssim_loss(const Image& x, const Image& y, const SsimParams& params) {
  return 1.0 - ssim(x, y, params);
}

double ssim_contrast_structure(const Image& x, const Image& y, const SsimParams& params) {
  return ssim_means(x, y, params).cs;
}

double huber(const Image& x, const Image& y, double delta) {
  require_same(x, y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::abs(static_cast<double>(x.pixels()[i]) - y.pixels()[i]);
    s += d <= delta ? 0.5 * d * d : delta * (d - 0.5 * delta);
  }
  return s / static_cast<double>(x.size());
}

double l1(const Image& x, const Image& y) {
  require_same(x, y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += std::abs(static_cast<double>(x.pixels()[i]) - y.pixels()[i]);
  }
  return s / static_cast<double>(x.size());
}

double l2(const Image& x, const Image& y) {
  require_same(x, y);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.pixels()[i]) - y.pixels()[i];
    s += d * d;
  }
  return s / static_cast<double>(x.size());
}

// --- tensor forms -----------------------------------------------------------

torch::Tensor ssim_per_sample(const torch::Tensor& x, const torch::Tensor& y,
                              const SsimParams& params) {
  require_same(x, y);
  if (x.dim() != 4 || x.size(1) != 1) raise(ErrorCode::kDimension, "SSIM expects [B,1,H,W]");
  params.validate();
  const int k = params.effective_window(static_cast<int>(x.size(2)), static_cast<int>(x.size(3)));
  const auto taps = gaussian_taps(k, params.sigma);
  auto g = torch::tensor(taps, torch::TensorOptions().dtype(torch::kFloat64)).to(x.dtype());
  auto kernel = torch::outer(g, g).view({1, 1, k, k});
  auto blur = [&](const torch::Tensor& t) { return torch::conv2d(t, kernel); };
  const auto mx = blur(x);
  const auto my = blur(y);
  const auto vx = blur(x * x) - mx * mx;
  const auto vy = blur(y * y) - my * my;
  const auto cov = blur(x * y) - mx * my;
  const double c1 = params.c1();
  const double c2 = params.c2();
  const auto map = ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
  return map.mean({1, 2, 3});
}

torch::Tensor ssim(const torch::Tensor& x, const torch::Tensor& y, const SsimParams& params) {
  return ssim_per_sample(x, y, params).mean();
}

torch::Tensor ssim_loss(const torch::Tensor& x, const torch::Tensor& y,
                        const SsimParams& params) {
  return 1.0 - ssim(x, y, params);
}

torch::Tensor huber(const torch::Tensor& x, const torch::Tensor& y, double delta) {
  require_same(x, y);
  const auto d = (x - y).abs();
  return torch::where(d <= delta, 0.5 * d * d, delta * (d - 0.5 * delta)).mean();
}

torch::Tensor l1(const torch::Tensor& x, const torch::Tensor& y) {
  require_same(x, y);
  return (x - y).abs().mean();
}

torch::Tensor l2(const torch::Tensor& x, const torch::Tensor& y) {
  require_same(x, y);
  return (x - y).pow(2).mean();
}

}  // namespace vialscan
