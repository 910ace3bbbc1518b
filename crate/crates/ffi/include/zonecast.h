#ifndef ZONECAST_H
#define ZONECAST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZcStatus {
  ZC_STATUS_OK = 0,
  ZC_STATUS_NULL_ARGUMENT = 1,
  ZC_STATUS_CONFIG = 2,
  ZC_STATUS_IO = 3,
  ZC_STATUS_FORMAT = 4,
  ZC_STATUS_RANGE = 5,
  ZC_STATUS_NON_FINITE = 6,
  ZC_STATUS_BUFFER_TOO_SMALL = 7,
  ZC_STATUS_INTERNAL = 8,
} ZcStatus;

/**
 * Scenarios plus the manifest they were generated under.
 */
typedef struct ZcDataset ZcDataset;

/**
 * Trained or freshly initialized model with its optimizer state.
 */
typedef struct ZcModel ZcModel;

/**
 * Held-out metrics at horizons 1, 2, 3 and 4 s. Fields that do not apply
 * are NaN.
 */
typedef struct ZcMetrics {
  size_t agents;
  double ade[4];
  double fde[4];
  double intention_accuracy;
  double intention_map;
  double penetration_rate;
} ZcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *zc_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`) and returns its full length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t zc_last_error(char *buf, size_t len);

/**
 * Fresh model from `key = value` config text (null for defaults).
 *
 * # Safety
 * `config_text` must be null or NUL-terminated; `out` must be writable.
 */
enum ZcStatus zc_model_init(const char *config_text, struct ZcModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ZcStatus zc_model_load(const char *path, struct ZcModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum ZcStatus zc_model_save(const struct ZcModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void zc_model_free(struct ZcModel *model);

/**
 * Number of scalar parameters and completed optimizer steps.
 *
 * # Safety
 * `model` must be a live handle; outputs may be null.
 */
enum ZcStatus zc_model_info(const struct ZcModel *model, size_t *params, uint64_t *steps);

/**
 * Generates `count` scenarios under `config_text` (null for defaults).
 *
 * # Safety
 * `config_text` must be null or NUL-terminated; `out` must be writable.
 */
enum ZcStatus zc_dataset_generate(size_t count,
                                  uint64_t seed,
                                  const char *config_text,
                                  struct ZcDataset **out);

/**
 * # Safety
 * `dir` must be NUL-terminated; `out` must be writable.
 */
enum ZcStatus zc_dataset_load(const char *dir, struct ZcDataset **out);

/**
 * # Safety
 * `ds` must be a live handle; `dir` must be NUL-terminated.
 */
enum ZcStatus zc_dataset_save(const struct ZcDataset *ds, const char *dir);

/**
 * # Safety
 * `ds` must be a live handle or null.
 */
size_t zc_dataset_len(const struct ZcDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void zc_dataset_free(struct ZcDataset *ds);

/**
 * Trains `epochs` more epochs on the training split, in place. `log_path`
 * may be null to discard the log.
 *
 * # Safety
 * Handles must be live; `log_path` must be null or NUL-terminated.
 */
enum ZcStatus zc_train(struct ZcModel *model,
                       const struct ZcDataset *ds,
                       size_t epochs,
                       const char *log_path);

/**
 * Single-modal prediction for target `target` of scenario `scenario`:
 * writes δ (x, y) pairs in the local raster frame to `xy` (capacity in
 * doubles) and the pair count to `len`.
 *
 * # Safety
 * Handles must be live; `xy` must hold `capacity` doubles; `len` writable.
 */
enum ZcStatus zc_predict(const struct ZcModel *model,
                         const struct ZcDataset *ds,
                         size_t scenario,
                         size_t target,
                         double *xy,
                         size_t capacity,
                         size_t *len);

/**
 * Evaluates on the held-out split. A null `model` evaluates the
 * constant-velocity baseline under the dataset's manifest. `samples == 0`
 * selects the single-modal protocol, otherwise min-over-`samples`.
 *
 * # Safety
 * `ds` must be live, `model` live or null, `out` writable.
 */
enum ZcStatus zc_evaluate(const struct ZcModel *model,
                          const struct ZcDataset *ds,
                          size_t samples,
                          uint64_t seed,
                          struct ZcMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZONECAST_H */
