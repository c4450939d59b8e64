#ifndef COROLLA_H
#define COROLLA_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values are stable; new codes are only appended.
 */
typedef enum {
  COROLLA_STATUS_OK = 0,
  COROLLA_STATUS_INVALID_ARGUMENT = 1,
  COROLLA_STATUS_INVALID_SPEC = 2,
  COROLLA_STATUS_FILE_NOT_FOUND = 3,
  COROLLA_STATUS_BAD_FORMAT = 4,
  COROLLA_STATUS_PAYLOAD_MISMATCH = 5,
  COROLLA_STATUS_NON_FINITE = 6,
  COROLLA_STATUS_DIMENSION = 7,
  COROLLA_STATUS_INFEASIBLE = 8,
  COROLLA_STATUS_TOO_LARGE = 9,
  COROLLA_STATUS_SHAPE = 10,
  COROLLA_STATUS_NUMERIC = 11,
  COROLLA_STATUS_DEGENERATE_BATCH = 12,
  COROLLA_STATUS_UNDEFINED_KAPPA = 13,
  COROLLA_STATUS_CHECKPOINT_MISMATCH = 14,
  COROLLA_STATUS_IO = 15,
  COROLLA_STATUS_JSON = 16,
  COROLLA_STATUS_PNG = 17,
  COROLLA_STATUS_NULL_POINTER = 100,
  COROLLA_STATUS_INVALID_UTF8 = 101,
  COROLLA_STATUS_BUFFER_TOO_SMALL = 102,
  COROLLA_STATUS_PANIC = 103,
} CorollaStatus;

/**
 * Opaque trained classifier.
 */
typedef struct CorollaModel CorollaModel;

/**
 * Opaque rendered thickness map.
 */
typedef struct CorollaThicknessMap CorollaThicknessMap;

/**
 * Opaque OCT volume.
 */
typedef struct CorollaVolume CorollaVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next corolla call on the same thread.
 */
const char *corolla_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *corolla_version(void);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
CorollaStatus corolla_volume_load(const char *path, CorollaVolume **out);

/**
 * Renders a phantom volume. `spec_json` overrides fields of the default
 * phantom spec and may be null.
 *
 * # Safety
 * `spec_json` must be null or nul-terminated; `out` must be valid.
 */
CorollaStatus corolla_volume_synth(const char *spec_json,
                                   uint8_t grade,
                                   uint64_t seed,
                                   CorollaVolume **out);

/**
 * Writes `(slices, rows, columns)` to `dims`.
 *
 * # Safety
 * `vol` must come from a volume constructor; `dims` must hold 3 values.
 */
CorollaStatus corolla_volume_dims(const CorollaVolume *vol, size_t *dims);

/**
 * # Safety
 * `vol` must be a live handle and `path` nul-terminated.
 */
CorollaStatus corolla_volume_save(const CorollaVolume *vol, const char *path);

/**
 * # Safety
 * `vol` must be null or a handle not yet freed.
 */
void corolla_volume_free(CorollaVolume *vol);

/**
 * Segments `vol` and renders its thickness map. `config_json` overrides
 * the default thickness config and may be null.
 *
 * # Safety
 * `vol` must be a live handle, `config_json` null or nul-terminated, `out` valid.
 */
CorollaStatus corolla_thickness_map_new(const CorollaVolume *vol,
                                        const char *config_json,
                                        CorollaThicknessMap **out);

/**
 * # Safety
 * `map` must be a live handle; `height` and `width` valid pointers.
 */
CorollaStatus corolla_thickness_map_size(const CorollaThicknessMap *map,
                                         size_t *height,
                                         size_t *width);

/**
 * Copies the interleaved RGB bytes (`height * width * 3`) into `buf`.
 *
 * # Safety
 * `map` must be a live handle and `buf` writable for `len` bytes.
 */
CorollaStatus corolla_thickness_map_rgb(const CorollaThicknessMap *map, uint8_t *buf, size_t len);

/**
 * Mean layer thickness before resampling, in the configured units.
 *
 * # Safety
 * `map` must be a live handle and `mean` valid.
 */
CorollaStatus corolla_thickness_map_mean(const CorollaThicknessMap *map, double *mean);

/**
 * # Safety
 * `map` must be a live handle and `path` nul-terminated.
 */
CorollaStatus corolla_thickness_map_save_png(const CorollaThicknessMap *map, const char *path);

/**
 * # Safety
 * `map` must be null or a handle not yet freed.
 */
void corolla_thickness_map_free(CorollaThicknessMap *map);

/**
 * Loads a classifier checkpoint written by stage-2 training.
 *
 * # Safety
 * `path` must be nul-terminated and `out` valid.
 */
CorollaStatus corolla_model_load(const char *path, CorollaModel **out);

/**
 * Writes a bit set of the model's branches: 1 for fundus, 2 for thickness.
 *
 * # Safety
 * `model` must be a live handle and `mask` valid.
 */
CorollaStatus corolla_model_branches(const CorollaModel *model, uint32_t *mask);

/**
 * Grades one case from square interleaved RGB images of side `side`.
 * Images of branches the model lacks may be null. `logits` may be null or
 * hold 3 values.
 *
 * # Safety
 * Non-null image pointers must be readable for `side * side * 3` bytes;
 * `model` must be a live handle and `grade` valid.
 */
CorollaStatus corolla_model_predict(const CorollaModel *model,
                                    const uint8_t *fundus_rgb,
                                    const uint8_t *thickness_rgb,
                                    size_t side,
                                    uint32_t *grade,
                                    double *logits);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void corolla_model_free(CorollaModel *model);

/**
 * Supervised contrastive loss (sum over anchors) of `2n` unit rows of
 * width `dim`: rows `0..n` are originals, rows `n..2n` their second views,
 * and `labels` holds the `n` class labels. Anchors without positives are
 * skipped.
 *
 * # Safety
 * `z` must be readable for `2n * dim` values, `labels` for `n`, `loss` valid.
 */
CorollaStatus corolla_supcon_loss(const double *z,
                                  size_t n,
                                  size_t dim,
                                  const uint32_t *labels,
                                  double temperature,
                                  double *loss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COROLLA_H */
