#ifndef RDBSSL_H
#define RDBSSL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Positive values match the CLI exit codes.
typedef enum RdbsslStatus {
  RDBSSL_STATUS_OK = 0,
  RDBSSL_STATUS_CONFIG_ERROR = 1,
  RDBSSL_STATUS_DATA_ERROR = 2,
  RDBSSL_STATUS_NUMERIC_ERROR = 3,
  RDBSSL_STATUS_NULL_POINTER = 10,
  RDBSSL_STATUS_INVALID_ARGUMENT = 11,
  RDBSSL_STATUS_PANIC = 12,
} RdbsslStatus;

// Parsed and validated experiment configuration.
typedef struct RdbsslConfig RdbsslConfig;

// A generated synthetic dataset.
typedef struct RdbsslDataset RdbsslDataset;

// Result of a completed pipeline run.
typedef struct RdbsslRun RdbsslRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none.
const char *rdbssl_last_error(void);

// Library version as a static NUL-terminated string.
const char *rdbssl_version(void);

// ROC-AUC of `scores` against 0/1 `labels`, ties counted as one half.
//
// # Safety
// `scores` and `labels` must point to `n` readable elements; `out` must be writable.
enum RdbsslStatus rdbssl_roc_auc(const double *scores,
                                 const uint8_t *labels,
                                 size_t n,
                                 double *out);

// Plug-in mutual information in bits between two discrete samples.
//
// # Safety
// `x` and `y` must point to `n` readable elements; `out` must be writable.
enum RdbsslStatus rdbssl_mutual_information(const uint32_t *x,
                                            const uint32_t *y,
                                            size_t n,
                                            double *out);

// Plug-in co-information `I(x;y) - I(x;y|z)` in bits.
//
// # Safety
// `x`, `y` and `z` must point to `n` readable elements; `out` must be writable.
enum RdbsslStatus rdbssl_co_information(const uint32_t *x,
                                        const uint32_t *y,
                                        const uint32_t *z,
                                        size_t n,
                                        double *out);

// Loads and validates a configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RdbsslStatus rdbssl_config_load(const char *path, struct RdbsslConfig **out);

// Parses configuration text. Relative data paths resolve against `base_dir`,
// which may be NULL for the current directory.
//
// # Safety
// `text` must be NUL-terminated, `base_dir` NUL-terminated or NULL; `out` must be writable.
enum RdbsslStatus rdbssl_config_parse(const char *text,
                                      const char *base_dir,
                                      struct RdbsslConfig **out);

// Replaces the output directory.
//
// # Safety
// `config` must come from this library; `dir` must be NUL-terminated.
enum RdbsslStatus rdbssl_config_set_output(struct RdbsslConfig *config, const char *dir);

// Replaces the seed list with a single seed.
//
// # Safety
// `config` must come from this library.
enum RdbsslStatus rdbssl_config_set_seed(struct RdbsslConfig *config, uint64_t seed);

// # Safety
// `config` must come from this library or be NULL; it must not be used afterwards.
void rdbssl_config_free(struct RdbsslConfig *config);

// Runs the full pipeline for `config`.
//
// # Safety
// `config` must come from this library; `out` must be writable.
enum RdbsslStatus rdbssl_run_pipeline(const struct RdbsslConfig *config, struct RdbsslRun **out);

// Run manifest as JSON, owned by `run`.
//
// # Safety
// `run` must come from this library or be NULL.
const char *rdbssl_run_manifest_json(const struct RdbsslRun *run);

// Path of the metrics CSV, owned by `run`.
//
// # Safety
// `run` must come from this library or be NULL.
const char *rdbssl_run_metrics_csv(const struct RdbsslRun *run);

// Number of checkpoints the run produced, 0 for NULL.
//
// # Safety
// `run` must come from this library or be NULL.
size_t rdbssl_run_checkpoint_count(const struct RdbsslRun *run);

// # Safety
// `run` must come from this library or be NULL; it must not be used afterwards.
void rdbssl_run_free(struct RdbsslRun *run);

// Generates a synthetic trap from a TOML spec such as
// `kind = "xor_trap"\nn = 1000`.
//
// # Safety
// `spec_toml` must be NUL-terminated; `out` must be writable.
enum RdbsslStatus rdbssl_synth_generate(const char *spec_toml,
                                        uint64_t seed,
                                        struct RdbsslDataset **out);

// Rows in the target table, 0 for NULL.
//
// # Safety
// `dataset` must come from this library or be NULL.
size_t rdbssl_dataset_rows(const struct RdbsslDataset *dataset);

// Copies the 0/1 labels into `out`, which holds `capacity` bytes.
//
// # Safety
// `dataset` must come from this library; `out` must hold `capacity` writable bytes.
enum RdbsslStatus rdbssl_dataset_labels(const struct RdbsslDataset *dataset,
                                        uint8_t *out,
                                        size_t capacity);

// Writes schema, CSV tables and metadata under `dir`.
//
// # Safety
// `dataset` must come from this library; `dir` must be NUL-terminated.
enum RdbsslStatus rdbssl_dataset_write(const struct RdbsslDataset *dataset, const char *dir);

// # Safety
// `dataset` must come from this library or be NULL; it must not be used afterwards.
void rdbssl_dataset_free(struct RdbsslDataset *dataset);

// Runs the built-in checks and reports how many passed.
//
// # Safety
// `passed` and `total` must be writable.
enum RdbsslStatus rdbssl_selftest(size_t *passed, size_t *total);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RDBSSL_H */
