// Copyright 2026 The ltdd Authors.
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

#ifndef LTDD_LTDD_H_
#define LTDD_LTDD_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define LTDD_API __declspec(dllexport)
#else
#define LTDD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ltdd_status {
  LTDD_OK = 0,
  LTDD_ERR_INVALID_ARGUMENT = 1,
  LTDD_ERR_IO = 2,
  LTDD_ERR_FORMAT = 3,
  LTDD_ERR_NUMERIC = 4,
  LTDD_ERR_PROVENANCE = 5,
  LTDD_ERR_CONFIG = 6,
  LTDD_ERR_INTERNAL = 7
} ltdd_status;

/* Message of the most recent failure on the calling thread; never NULL. */
LTDD_API const char* ltdd_last_error(void);
LTDD_API const char* ltdd_version(void);

/* ------------------------------------------------------------ configuration */

typedef struct ltdd_config ltdd_config;

LTDD_API ltdd_status ltdd_config_new(ltdd_config** out);
LTDD_API ltdd_status ltdd_config_load(const char* path, ltdd_config** out);
LTDD_API ltdd_status ltdd_config_parse(const char* text, ltdd_config** out);
LTDD_API ltdd_status ltdd_config_set(ltdd_config* cfg, const char* key, const char* value);
/* Copies the value into buf (NUL-terminated, truncated to cap). *needed, when
   not NULL, receives the full length including the terminator. */
LTDD_API ltdd_status ltdd_config_get(const ltdd_config* cfg, const char* key, char* buf, size_t cap,
                                     size_t* needed);
LTDD_API ltdd_status ltdd_config_validate(const ltdd_config* cfg);
LTDD_API void ltdd_config_free(ltdd_config* cfg);

/* Static key table: name, default value and one-line description. */
LTDD_API size_t ltdd_config_key_count(void);
LTDD_API ltdd_status ltdd_config_key_at(size_t index, const char** name, const char** default_value,
                                        const char** help);

/* ----------------------------------------------------------------- datasets */

typedef struct ltdd_dataset ltdd_dataset;

LTDD_API ltdd_status ltdd_dataset_load(const char* path, ltdd_dataset** out);
LTDD_API ltdd_status ltdd_dataset_load_manifest(const char* csv_path, int channels, int height, int width,
                                                int num_classes, ltdd_dataset** out);
/* style: "standard", "hard", or NULL for standard. */
LTDD_API ltdd_status ltdd_dataset_gen_blobs(int num_classes, int per_class, int channels, int height, int width,
                                            uint64_t seed, const char* style, ltdd_dataset** out);
LTDD_API ltdd_status ltdd_dataset_make_long_tail(const ltdd_dataset* source, int largest_class_count,
                                                 double imbalance_factor, uint64_t seed, ltdd_dataset** out);
LTDD_API ltdd_status ltdd_dataset_balanced_split(const ltdd_dataset* source, size_t per_class, uint64_t seed,
                                                 ltdd_dataset** test, ltdd_dataset** remainder);
LTDD_API ltdd_status ltdd_dataset_save(const ltdd_dataset* ds, const char* path);
LTDD_API ltdd_status ltdd_dataset_info(const ltdd_dataset* ds, size_t* size, int* num_classes, int* channels,
                                       int* height, int* width);
/* Writes min(cap, num_classes) per-class counts. */
LTDD_API ltdd_status ltdd_dataset_class_counts(const ltdd_dataset* ds, size_t* counts, size_t cap);
LTDD_API void ltdd_dataset_free(ltdd_dataset* ds);

/* ------------------------------------------------------------------- stages */

/* File-level stage bodies. Settings come from cfg; paths are explicit. */
LTDD_API ltdd_status ltdd_make_lt(const ltdd_config* cfg, const char* train_out, const char* test_out);
/* role: "observer" or "teacher" (selects the derived seed). */
LTDD_API ltdd_status ltdd_train_expert(const ltdd_config* cfg, const char* role, const char* train_path,
                                       const char* ckpt_out, const char* log_out);
LTDD_API ltdd_status ltdd_recalibrate(const ltdd_config* cfg, const char* observer_path, const char* train_path,
                                      const char* bundle_out);
LTDD_API ltdd_status ltdd_init(const ltdd_config* cfg, const char* teacher_path, const char* train_path,
                               const char* init_out, const char* selection_out);
LTDD_API ltdd_status ltdd_recover(const ltdd_config* cfg, const char* init_path, const char* observer_path,
                                  const char* bundle_path, const char* recovered_out, const char* report_out);
LTDD_API ltdd_status ltdd_relabel(const ltdd_config* cfg, const char* recovered_path, const char* teacher_path,
                                  const char* observer_path, const char* bundle_path, const char* distilled_dir);
LTDD_API ltdd_status ltdd_eval(const ltdd_config* cfg, const char* distilled_dir, const char* test_path,
                               const char* eval_out);

/* ----------------------------------------------------------------- pipeline */

typedef void (*ltdd_log_fn)(const char* message, void* user);

/* Runs every stage under cfg's output_dir, skipping up-to-date ones, then
   writes the report. skipped_stages (optional) receives how many were skipped. */
LTDD_API ltdd_status ltdd_run_pipeline(const ltdd_config* cfg, ltdd_log_fn log, void* user,
                                       size_t* skipped_stages);
LTDD_API ltdd_status ltdd_report(const char* output_dir);

/* ------------------------------------------------------------- eval reports */

typedef struct ltdd_eval_report ltdd_eval_report;

LTDD_API ltdd_status ltdd_eval_report_load(const char* path, ltdd_eval_report** out);
LTDD_API ltdd_status ltdd_eval_report_summary(const ltdd_eval_report* r, double* overall, double* balanced,
                                              size_t* num_seeds);
/* Writes min(cap, C) seed-averaged per-class accuracies; *num_classes gets C. */
LTDD_API ltdd_status ltdd_eval_report_per_class(const ltdd_eval_report* r, double* out, size_t cap,
                                                size_t* num_classes);
LTDD_API void ltdd_eval_report_free(ltdd_eval_report* r);

#ifdef __cplusplus
}
#endif

#endif /* LTDD_LTDD_H_ */
