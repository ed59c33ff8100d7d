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
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "vialscan/imagecore.hpp"

namespace vialscan {

/// Knobs of the training-time perturbation. Each draw picks one base grid
/// period from `periods` and an octave count in [min_octaves, max_octaves].
struct PerlinParams {
  std::vector<int> periods{2, 4, 8, 16};
  int min_octaves = 1;
  int max_octaves = 4;
  double persistence = 0.5;
  double threshold = 0.5;
  double q = 0.75;  // probability of perturbing an image

  void validate() const;
  nlohmann::json to_json() const;
  static PerlinParams from_json(const nlohmann::json& j);
};

/// Resolved shape of one noise field.
struct NoiseShape {
  int period = 4;  // lattice cells across the shorter image side, first octave
  int octaves = 1;
  double persistence = 0.5;
};

/// Fractal gradient noise, min-max rescaled to [0,1]. Deterministic in seed.
Image perlin_field(int width, int height, const NoiseShape& shape, std::uint64_t seed);
/// Draws the NoiseShape from params using the seed, then renders it.
Image perlin_field(int width, int height, const PerlinParams& params, std::uint64_t seed);

/// 1.0 where field > threshold, else 0.0.
Image binarize_mask(const Image& field, double threshold);

struct PerturbationResult {
  Image x_star;
  Image mask;
  Image noise;
  double beta = 0.0;
  bool applied = false;
};

/// With probability q superimposes a Perlin blob on x:
///   x* = (1 - M) x + (1 - beta) M x + beta N,  beta ~ U(0.5, 1)
/// where M is the binarized field and N the field restricted to M.
PerturbationResult perturb(const Image& x, const PerlinParams& params, std::uint64_t seed);
PerturbationResult perturb(const Image& x, const PerlinParams& params, std::mt19937_64& rng);

/// Deterministic composition from known components (used by perturb and for
/// forcing beta in tests).
PerturbationResult compose_perturbation(const Image& x, const Image& field, double threshold,
                                        double beta);

}  // namespace vialscan
