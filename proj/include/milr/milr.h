/* SPDX-License-Identifier: Apache-2.0 */
/* Copyright 2026 The milr Authors */

/*
 * C interface to the milr core. Every function returns a milr_status;
 * on failure milr_last_error() describes the error on the calling thread.
 * Strings returned through char** out-parameters are owned by the caller
 * and released with milr_string_free().
 */

#ifndef MILR_MILR_H
#define MILR_MILR_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MILR_API __declspec(dllexport)
#else
#define MILR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum milr_status {
  MILR_OK = 0,
  MILR_E_INVALID_ARGUMENT = 1,
  MILR_E_DEGENERATE_HISTOGRAM = 2,
  MILR_E_MALFORMED_JSON = 3,
  MILR_E_MISSING_SLIDE = 4,
  MILR_E_DUPLICATE_PATIENT = 5,
  MILR_E_IO = 6,
  MILR_E_BAD_MAGIC = 7,
  MILR_E_VERSION_MISMATCH = 8,
  MILR_E_TRUNCATED_FILE = 9,
  MILR_E_NON_FINITE_VALUE = 10,
  MILR_E_WRONG_PATCH_SIZE = 11,
  MILR_E_SINGULAR_STAIN_MATRIX = 12,
  MILR_E_DIMENSION_MISMATCH = 13,
  MILR_E_NON_FINITE_GRADIENT = 14,
  MILR_E_SINGLE_CLASS_TRAINING = 15,
  MILR_E_SINGLE_CLASS_COHORT = 16,
  MILR_E_EMPTY_PATIENT = 17,
  MILR_E_UNLABELED_TILE = 18,
  MILR_E_NO_TUMOR_TILES = 19,
  MILR_E_SINGLE_CLASS_LABELS = 20,
  MILR_E_NO_POSITIVES = 21,
  MILR_E_TOO_FEW_PATIENTS = 22,
  MILR_E_NO_TUMOR_REGION = 23,
  MILR_E_NO_CELLS_FOUND = 24,
  MILR_E_EMPTY_SELECTION = 25,
  MILR_E_MISMATCHED_GRID = 26,
  MILR_E_NOTHING_TO_UNDO = 27,
  MILR_E_UNKNOWN_TILE = 28,
  MILR_E_PORT_IN_USE = 29,
  MILR_E_UNWRITABLE_LABELS = 30,
  MILR_E_CONFIG_INCONSISTENT = 31,
  MILR_E_INTERNAL = 99
} milr_status;

typedef struct milr_config milr_config;
typedef struct milr_model milr_model;
typedef struct milr_service milr_service;

MILR_API const char *milr_version(void);
/* Symbolic name of a status, e.g. "UnlabeledTile". */
MILR_API const char *milr_status_name(milr_status status);
/* Message of the last failed call on this thread; "" after success. */
MILR_API const char *milr_last_error(void);
MILR_API void milr_string_free(char *s);

/* ---- run configuration ------------------------------------------------ */

MILR_API milr_status milr_config_new(milr_config **out);
/* Overlays a JSON document on the defaults; unknown keys are rejected. */
MILR_API milr_status milr_config_from_json(const char *json, milr_config **out);
MILR_API milr_status milr_config_load(const char *path, milr_config **out);
/* Sets one field by JSON pointer ("/tiling/tile_size") to a JSON value. */
MILR_API milr_status milr_config_set(milr_config *cfg, const char *pointer,
                                     const char *json_value);
MILR_API milr_status milr_config_to_json(const milr_config *cfg, char **out);
MILR_API void milr_config_free(milr_config *cfg);

/* ---- workflow commands ------------------------------------------------ */

/*
 * Each command writes its artifacts and run.json into the configured
 * output directory and returns a JSON summary in *summary (may be NULL).
 */
MILR_API milr_status milr_synth_generate(const milr_config *cfg, char **summary);
MILR_API milr_status milr_tile(const milr_config *cfg, char **summary);
MILR_API milr_status milr_features_extract(const milr_config *cfg, char **summary);
MILR_API milr_status milr_features_import(const milr_config *cfg, const char *source,
                                          char **summary);
MILR_API milr_status milr_train_tumor(const milr_config *cfg, char **summary);
MILR_API milr_status milr_train_responder(const milr_config *cfg, char **summary);
MILR_API milr_status milr_predict(const milr_config *cfg, char **summary);
MILR_API milr_status milr_cv(const milr_config *cfg, char **summary);
MILR_API milr_status milr_eval_tps(const milr_config *cfg, char **summary);
MILR_API milr_status milr_eval_enrich(const milr_config *cfg, char **summary);
MILR_API milr_status milr_heatmap(const milr_config *cfg, char **summary);
MILR_API milr_status milr_ablation(const milr_config *cfg, char **summary);
MILR_API milr_status milr_export_labels(const milr_config *cfg, char **summary);

/* ---- models ----------------------------------------------------------- */

MILR_API milr_status milr_model_load(const char *path, milr_model **out);
/* Input width the model expects. */
MILR_API milr_status milr_model_dim(const milr_model *model, size_t *d);
/*
 * Bag probability for k instances of width d (row-major k*d doubles).
 * attention may be NULL; otherwise it receives k weights.
 */
MILR_API milr_status milr_model_predict(const milr_model *model, const double *instances,
                                        size_t k, size_t d, double *probability,
                                        double *attention);
MILR_API void milr_model_free(milr_model *model);

/* ---- annotation service ----------------------------------------------- */

/* Binds host:port from the config (port 0 picks a free one) and serves. */
MILR_API milr_status milr_service_start(const milr_config *cfg, milr_service **out);
MILR_API int milr_service_port(const milr_service *svc);
/* Blocks until milr_service_stop() is called from another thread. */
MILR_API milr_status milr_service_wait(milr_service *svc);
MILR_API milr_status milr_service_stop(milr_service *svc);
MILR_API void milr_service_free(milr_service *svc);

/* ---- metrics ---------------------------------------------------------- */

MILR_API milr_status milr_roc_auc(const double *scores, const int *labels, size_t n,
                                  double *auc);
MILR_API milr_status milr_pr_auc(const double *scores, const int *labels, size_t n,
                                 double *auc);

#ifdef __cplusplus
}
#endif

#endif /* MILR_MILR_H */
