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

#ifndef VIALSCAN_H_
#define VIALSCAN_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define VS_API __declspec(dllexport)
#else
#define VS_API __attribute__((visibility("default")))
#endif

typedef enum vs_status {
  VS_OK = 0,
  VS_ERR_RANGE = 1,
  VS_ERR_DIMENSION = 2,
  VS_ERR_GEOMETRY = 3,
  VS_ERR_CONFIG = 4,
  VS_ERR_MODEL = 5,
  VS_ERR_DATA = 6,
  VS_ERR_CALIBRATION = 7,
  VS_ERR_TRAINING = 8,
  VS_ERR_IO = 9,
  VS_ERR_ARGUMENT = 20,
  VS_ERR_BUDGET = 21,
  VS_ERR_INTERNAL = 99
} vs_status;

/* Message of the last failure on the calling thread; "" if none. */
VS_API const char* vs_last_error(void);
VS_API const char* vs_status_name(vs_status status);
VS_API const char* vs_version(void);
/* Frees strings returned through char** out-parameters. */
VS_API void vs_free_string(char* s);

/* ---- models -------------------------------------------------------------- */

typedef struct vs_model vs_model;

VS_API vs_status vs_model_load(const char* checkpoint_path, vs_model** out);
/* Randomly initialized model from a network config JSON string (NULL: the
 * full-size default). */
VS_API vs_status vs_model_create(const char* network_json, uint64_t seed, vs_model** out);
VS_API void vs_model_free(vs_model* model);
VS_API int vs_model_image_size(const vs_model* model);

/* Scores `count` square patches of image_size^2 floats in [0,1], stored
 * back to back. scores_out receives count values of 1 - SSIM. */
VS_API vs_status vs_model_score(vs_model* model, const float* pixels, size_t count,
                                double* scores_out);
/* Reconstruction of one patch into recon_out (image_size^2 floats). */
VS_API vs_status vs_model_reconstruct(vs_model* model, const float* pixels, float* recon_out);

/* ---- thresholds ---------------------------------------------------------- */

typedef struct vs_thresholds vs_thresholds;

VS_API vs_status vs_thresholds_load(const char* path, vs_thresholds** out);
VS_API vs_status vs_thresholds_create(const double values[4], vs_thresholds** out);
VS_API void vs_thresholds_free(vs_thresholds* thresholds);
VS_API vs_status vs_thresholds_get(const vs_thresholds* thresholds, int region, double* out);
/* *reject = score > threshold[region]. */
VS_API vs_status vs_classify(const vs_thresholds* thresholds, double score, int region, int* reject);

/* ---- workflows ----------------------------------------------------------- */

typedef struct vs_options {
  const char* config;      /* pipeline config file */
  const char* data;        /* kit root, or a run directory for infer */
  const char* checkpoint;
  const char* thresholds;  /* file, or a directory of thresholds_<level>.json */
  const char* out;
  const char* level;       /* patch | strip | run | NULL for all */
  uint64_t seed;
  int has_seed;
  int threads;
  double budget_ms;
  int batches;             /* bench repetitions */
  int64_t max_steps;       /* train: 0 keeps the config value */
  int quiet;
} vs_options;

VS_API void vs_options_init(vs_options* options);

/* Each workflow writes its artifacts under options->out and, if summary is
 * non-NULL, returns a JSON summary to free with vs_free_string. */
VS_API vs_status vs_gen_data(const vs_options* options, char** summary);
VS_API vs_status vs_train(const vs_options* options, char** summary);
VS_API vs_status vs_calibrate(const vs_options* options, char** summary);
VS_API vs_status vs_infer(const vs_options* options, char** summary);
VS_API vs_status vs_evaluate(const vs_options* options, char** summary);
/* Returns VS_ERR_BUDGET when the p99 60-patch batch time exceeds
 * options->budget_ms; the summary is still produced. */
VS_API vs_status vs_bench(const vs_options* options, char** summary);

#ifdef __cplusplus
}
#endif

#endif  // VIALSCAN_H_
