// Copyright 2026 The koopscore Authors
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

/*
 * koopscore C API.
 *
 * Every function returns a ks_status. On failure the message of the most
 * recent error on the calling thread is available from ks_last_error().
 * Strings returned through char** out-parameters are owned by the caller and
 * must be released with ks_string_free(). Handles are released with their
 * matching *_free function; passing NULL to a free function is a no-op.
 */
#ifndef KOOPSCORE_KOOPSCORE_H_
#define KOOPSCORE_KOOPSCORE_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KS_API __declspec(dllexport)
#else
#define KS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ks_status {
  KS_OK = 0,
  KS_ERR_VALIDATION = 1,   /* invalid argument, config, or input data */
  KS_ERR_IO = 2,           /* file could not be read or written */
  KS_ERR_NUMERICAL = 3,    /* degenerate or ill-conditioned numerics */
  KS_ERR_FORMAT = 4,       /* malformed container, model, or manifest */
  KS_ERR_INCOMPATIBLE = 5, /* model file version not supported */
  KS_ERR_INTERNAL = 6
} ks_status;

typedef struct ks_config ks_config;
typedef struct ks_sequence ks_sequence;
typedef struct ks_model ks_model;

KS_API const char* ks_version(void);
/* Message of the last failed call on this thread ("" if none). */
KS_API const char* ks_last_error(void);
KS_API void ks_string_free(char* s);

/* --- Configuration --- */
KS_API ks_status ks_config_default(ks_config** out);
KS_API ks_status ks_config_load(const char* path, ks_config** out);
KS_API ks_status ks_config_parse(const char* json_text, ks_config** out);
KS_API ks_status ks_config_set_seed(ks_config* cfg, uint64_t seed);
KS_API ks_status ks_config_set_threshold(ks_config* cfg, double threshold);
/* Full configuration (defaults filled in) as JSON text. */
KS_API ks_status ks_config_to_json(const ks_config* cfg, char** out_json);
KS_API void ks_config_free(ks_config* cfg);

/* --- Sequences (KSQ1 containers) --- */
KS_API ks_status ks_sequence_load(const char* path, ks_sequence** out);
KS_API ks_status ks_sequence_save(const ks_sequence* seq, const char* path);
KS_API ks_status ks_sequence_shape(const ks_sequence* seq, int* frames, int* height, int* width, double* dt);
/* View label ("PLAX", "PSAX-MP", "PSAX-AV", "A4C", "A2C"); borrowed pointer. */
KS_API const char* ks_sequence_view(const ks_sequence* seq);
KS_API const char* ks_sequence_patient(const ks_sequence* seq);
/* Copies frames*height*width floats into `out` (t-major, row-major). */
KS_API ks_status ks_sequence_pixels(const ks_sequence* seq, float* out, size_t count);
KS_API void ks_sequence_free(ks_sequence* seq);

/* --- Models (KRM1 files) --- */
KS_API ks_status ks_model_load(const char* path, ks_model** out);
/* Header summary (dims, configuration, views) as JSON text. */
KS_API ks_status ks_model_describe(const ks_model* model, char** out_json);
KS_API void ks_model_free(ks_model* model);

/* --- Pipeline commands --- */
/* n < 0 keeps the configured cohort size. */
KS_API ks_status ks_synth(const ks_config* cfg, int n, const char* out_dir);
KS_API ks_status ks_train(const ks_config* cfg, const char* manifest, const char* out_dir);
/* split: "all", "train" or "test"; patient may be NULL or "" for every patient. */
KS_API ks_status ks_score(const ks_config* cfg, const char* model_path, const char* manifest, const char* split,
                          const char* patient, const char* out_dir);
KS_API ks_status ks_evaluate(const ks_config* cfg, const char* scores_csv, const char* out_dir);
/* model_path may be NULL; out_path may be NULL. The JSON is also returned
 * through out_json when that pointer is non-NULL. */
KS_API ks_status ks_decompose(const ks_config* cfg, const char* sequence_path, const char* model_path,
                              const char* out_path, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* KOOPSCORE_KOOPSCORE_H_ */
