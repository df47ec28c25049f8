#ifndef CTGSM_H
#define CTGSM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. The first four values match the
 * command-line exit codes.
 */
typedef enum CtgsmStatus {
  CTGSM_STATUS_OK = 0,
  CTGSM_STATUS_CONFIG_ERROR = 1,
  CTGSM_STATUS_DATA_ERROR = 2,
  CTGSM_STATUS_DIVERGENCE = 3,
  CTGSM_STATUS_NULL_POINTER = 4,
  CTGSM_STATUS_INVALID_ARGUMENT = 5,
  CTGSM_STATUS_BUFFER_TOO_SMALL = 6,
  CTGSM_STATUS_PANIC = 7,
} CtgsmStatus;

/**
 * Feature table with class labels.
 */
typedef struct CtgsmDataset CtgsmDataset;

/**
 * Trained classifier.
 */
typedef struct CtgsmModel CtgsmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *ctgsm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ctgsm_version(void);

/**
 * Loads and cleans a CSV file. Non-numeric columns other than the label
 * are dropped. `label_column` may be null for the default `Label`.
 *
 * # Safety
 * `path` and `label_column` must be null or NUL-terminated strings; `out`
 * must be writable.
 */
enum CtgsmStatus ctgsm_dataset_load_csv(const char *path,
                                        const char *label_column,
                                        struct CtgsmDataset **out);

/**
 * Generates the synthetic benchmark with every class count multiplied by
 * `scale` (1.0 gives the default sizes).
 *
 * # Safety
 * `out` must be writable.
 */
enum CtgsmStatus ctgsm_dataset_benchmark(double scale, uint64_t seed, struct CtgsmDataset **out);

/**
 * Builds a dataset from a row-major feature buffer and class ids in
 * `[0, n_classes)`. Class names are `class_names[0..n_classes]`.
 *
 * # Safety
 * `features` must hold `n_rows * n_features` values, `labels` `n_rows`
 * values and `class_names` `n_classes` NUL-terminated strings.
 */
enum CtgsmStatus ctgsm_dataset_new(const double *features,
                                   size_t n_rows,
                                   size_t n_features,
                                   const uint32_t *labels,
                                   const char *const *class_names,
                                   size_t n_classes,
                                   struct CtgsmDataset **out);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t ctgsm_dataset_n_rows(const struct CtgsmDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t ctgsm_dataset_n_features(const struct CtgsmDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t ctgsm_dataset_n_classes(const struct CtgsmDataset *dataset);

/**
 * Copies the row-major features into `out` (`n_rows * n_features` values).
 *
 * # Safety
 * `out` must be writable for `out_len` values.
 */
enum CtgsmStatus ctgsm_dataset_features(const struct CtgsmDataset *dataset,
                                        double *out,
                                        size_t out_len);

/**
 * Copies the class ids into `out` (`n_rows` values).
 *
 * # Safety
 * `out` must be writable for `out_len` values.
 */
enum CtgsmStatus ctgsm_dataset_labels(const struct CtgsmDataset *dataset,
                                      uint32_t *out,
                                      size_t out_len);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void ctgsm_dataset_free(struct CtgsmDataset *dataset);

/**
 * Trains a classifier. `config_json` is a classifier configuration object
 * (missing fields take defaults) or null for all defaults.
 *
 * # Safety
 * `dataset` must be a live handle, `config_json` null or a NUL-terminated
 * string and `out` writable.
 */
enum CtgsmStatus ctgsm_model_train(const struct CtgsmDataset *dataset,
                                   const char *config_json,
                                   struct CtgsmModel **out);

/**
 * Loads a classifier snapshot written by the pipeline
 * (`artifacts/classifier.json`) or by [`ctgsm_model_save`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum CtgsmStatus ctgsm_model_load(const char *path, struct CtgsmModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum CtgsmStatus ctgsm_model_save(const struct CtgsmModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctgsm_model_n_inputs(const struct CtgsmModel *model);

/**
 * Number of output classes (2 in binary mode).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t ctgsm_model_n_classes(const struct CtgsmModel *model);

/**
 * Class probabilities for `n_rows` row-major feature rows, written
 * row-major into `out` (`n_rows * n_classes` values).
 *
 * # Safety
 * `features` must hold `n_rows * n_features` values and `out` must be
 * writable for `out_len` values.
 */
enum CtgsmStatus ctgsm_model_predict_proba(const struct CtgsmModel *model,
                                           const double *features,
                                           size_t n_rows,
                                           size_t n_features,
                                           double *out,
                                           size_t out_len);

/**
 * Predicted class ids (ties go to the lower id), `n_rows` values.
 *
 * # Safety
 * As for [`ctgsm_model_predict_proba`].
 */
enum CtgsmStatus ctgsm_model_predict(const struct CtgsmModel *model,
                                     const double *features,
                                     size_t n_rows,
                                     size_t n_features,
                                     uint32_t *out,
                                     size_t out_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ctgsm_model_free(struct CtgsmModel *model);

/**
 * Runs the whole pipeline. `config_json` is a pipeline configuration
 * object (null for defaults); a non-null `out_dir` overrides its output
 * directory. Reports are written there, including `manifest.json`.
 *
 * # Safety
 * Both arguments must be null or NUL-terminated strings.
 */
enum CtgsmStatus ctgsm_run_pipeline(const char *config_json, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTGSM_H */
