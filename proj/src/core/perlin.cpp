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

#include "vialscan/perlin.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// One octave of lattice gradient noise with `cells_x` x `cells_y` cells.
void add_octave(std::vector<double>& acc, int width, int height, int cells_x, int cells_y,
                double amplitude, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const int gx_count = cells_x + 1;
  const int gy_count = cells_y + 1;
  std::vector<double> gx(static_cast<std::size_t>(gx_count * gy_count));
  std::vector<double> gy(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double a = angle(rng);
    gx[i] = std::cos(a);
    gy[i] = std::sin(a);
  }
  auto dot = [&](int ix, int iy, double dx, double dy) {
    const auto k = static_cast<std::size_t>(iy * gx_count + ix);
    return gx[k] * dx + gy[k] * dy;
  };
  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) * cells_y / height;
    const int iy = std::min(static_cast<int>(v), cells_y - 1);
    const double fy = v - iy;
    const double sy = fade(fy);
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) * cells_x / width;
      const int ix = std::min(static_cast<int>(u), cells_x - 1);
      const double fx = u - ix;
      const double sx = fade(fx);
      const double n00 = dot(ix, iy, fx, fy);
      const double n10 = dot(ix + 1, iy, fx - 1.0, fy);
      const double n01 = dot(ix, iy + 1, fx, fy - 1.0);
      const double n11 = dot(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
      const double nx0 = n00 + sx * (n10 - n00);
      const double nx1 = n01 + sx * (n11 - n01);
      acc[static_cast<std::size_t>(y) * width + x] += amplitude * (nx0 + sy * (nx1 - nx0));
    }
  }
}

}  // namespace

void PerlinParams::validate() const {
  if (periods.empty()) raise(ErrorCode::kConfig, "perlin periods list is empty");
  for (int p : periods) {
    if (p < 1) raise(ErrorCode::kConfig, "perlin period must be >= 1");
  }
  if (min_octaves < 1 || max_octaves < min_octaves) {
    raise(ErrorCode::kConfig, "perlin octave range must satisfy 1 <= min <= max");
  }
  if (!(q >= 0.0 && q <= 1.0)) raise(ErrorCode::kConfig, "perturbation probability q outside [0,1]");
  if (!(persistence > 0.0)) raise(ErrorCode::kConfig, "perlin persistence must be positive");
}

nlohmann::json PerlinParams::to_json() const {
  return {{"periods", periods},         {"min_octaves", min_octaves},
          {"max_octaves", max_octaves}, {"persistence", persistence},
          {"threshold", threshold},     {"q", q}};
}

PerlinParams PerlinParams::from_json(const nlohmann::json& j) {
  PerlinParams p;
  p.periods = j.value("periods", p.periods);
  p.min_octaves = j.value("min_octaves", p.min_octaves);
  p.max_octaves = j.value("max_octaves", p.max_octaves);
  p.persistence = j.value("persistence", p.persistence);
  p.threshold = j.value("threshold", p.threshold);
  p.q = j.value("q", p.q);
  p.validate();
  return p;
}

Image perlin_field(int width, int height, const NoiseShape& shape, std::uint64_t seed) {
  if (width <= 0 || height <= 0) raise(ErrorCode::kDimension, "noise field must be non-empty");
  if (shape.period < 1 || shape.octaves < 1) raise(ErrorCode::kConfig, "invalid noise shape");
  std::mt19937_64 rng(seed);
  std::vector<double> acc(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0.0);
  const int short_side = std::min(width, height);
  double amplitude = 1.0;
  int period = shape.period;
  for (int o = 0; o < shape.octaves; ++o) {
    // Cells never get finer than two pixels.
    const int cells = std::min(period, std::max(1, short_side / 2));
    const int cells_x = std::max(1, cells * width / short_side);
    const int cells_y = std::max(1, cells * height / short_side);
    add_octave(acc, width, height, cells_x, cells_y, amplitude, rng);
    amplitude *= shape.persistence;
    period *= 2;
  }
  const auto [lo_it, hi_it] = std::minmax_element(acc.begin(), acc.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  std::vector<float> out(acc.size(), 0.0f);
  if (span > 0.0) {
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>((acc[i] - lo) / span);
  }
  return Image::clamped(width, height, std::move(out));
}

Image perlin_field(int width, int height, const PerlinParams& params, std::uint64_t seed) {
  params.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, params.periods.size() - 1);
  std::uniform_int_distribution<int> octaves(params.min_octaves, params.max_octaves);
  NoiseShape shape;
  shape.period = params.periods[pick(rng)];
  shape.octaves = octaves(rng);
  shape.persistence = params.persistence;
  return perlin_field(width, height, shape, rng());
}

Image binarize_mask(const Image& field, double threshold) {
  std::vector<float> out(field.size());
  const auto src = field.pixels();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] > threshold ? 1.0f : 0.0f;
  return Image(field.width(), field.height(), std::move(out));
}

PerturbationResult compose_perturbation(const Image& x, const Image& field, double threshold,
                                        double beta) {
  if (!x.same_shape(field)) raise(ErrorCode::kDimension, "noise field does not match image");
  if (!(beta >= 0.0 && beta <= 1.0)) raise(ErrorCode::kRange, "beta outside [0,1]");
  PerturbationResult r;
  r.applied = true;
  r.beta = beta;
  r.mask = binarize_mask(field, threshold);
  const auto xs = x.pixels();
  const auto fs = field.pixels();
  const auto ms = r.mask.pixels();
  std::vector<float> noise(x.size());
  std::vector<float> star(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (ms[i] == 0.0f) {
      noise[i] = 0.0f;
      star[i] = xs[i];
    } else {
      noise[i] = fs[i];
      star[i] = static_cast<float>((1.0 - beta) * xs[i] + beta * fs[i]);
    }
  }
  r.noise = Image(x.width(), x.height(), std::move(noise));
  r.x_star = Image::clamped(x.width(), x.height(), std::move(star));
  return r;
}

PerturbationResult perturb(const Image& x, const PerlinParams& params, std::mt19937_64& rng) {
  params.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  std::uniform_real_distribution<double> beta_dist(0.5, 1.0);
  const double beta = beta_dist(rng);
  const std::uint64_t field_seed = rng();
  if (!(u < params.q)) {
    PerturbationResult r;
    r.x_star = x;
    r.mask = Image(x.width(), x.height(), 0.0f);
    r.noise = Image(x.width(), x.height(), 0.0f);
    r.beta = beta;
    r.applied = false;
    return r;
  }
  const Image field = perlin_field(x.width(), x.height(), params, field_seed);
  return compose_perturbation(x, field, params.threshold, beta);
}

PerturbationResult perturb(const Image& x, const PerlinParams& params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return perturb(x, params, rng);
}

}  // namespace vialscan
