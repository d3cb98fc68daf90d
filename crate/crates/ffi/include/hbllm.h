#ifndef HBLLM_H
#define HBLLM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Maximum number of salient-count candidates in [`HbllmConfig`].
 */
#define HBLLM_MAX_K_CANDIDATES 16

/**
 * Result code of every fallible call. Values 2–4 match the CLI exit codes.
 */
typedef enum {
  HBLLM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  HBLLM_STATUS_NULL_POINTER = 1,
  /**
   * Shape, length or configuration error.
   */
  HBLLM_STATUS_INVALID = 2,
  /**
   * Corrupt or truncated container, checksum mismatch.
   */
  HBLLM_STATUS_INTEGRITY = 3,
  /**
   * Non-positive pivot or singular triangular block.
   */
  HBLLM_STATUS_NUMERIC = 4,
  /**
   * A panic was caught at the boundary.
   */
  HBLLM_STATUS_PANIC = 5,
} HbllmStatus;

/**
 * Quantized layer.
 */
typedef struct HbllmLayer HbllmLayer;

/**
 * Dense row-major `f32` matrix.
 */
typedef struct HbllmMatrix HbllmMatrix;

typedef struct {
  /**
   * 0 = row, 1 = col.
   */
  uint32_t mode;
  uint32_t beta;
  /**
   * Percentile threshold candidates per band.
   */
  uint32_t candidates;
  bool share_mean;
  bool haar;
  bool compensate;
  /**
   * Score salient columns by ℓ1 instead of ℓ2.
   */
  bool norm_l1;
  /**
   * Score over `|W|` instead of the saliency matrix.
   */
  bool score_weight;
  /**
   * Used entries of `k_candidates`.
   */
  uint32_t k_count;
  uint32_t k_candidates[HBLLM_MAX_K_CANDIDATES];
  /**
   * Hessian damping; negative selects the automatic value.
   */
  double lambda;
} HbllmConfig;

typedef struct {
  uint64_t sign_bits;
  uint64_t scalar_bits;
  uint64_t mask_bits;
  uint64_t index_bits;
  uint64_t container_overhead_bits;
  uint64_t total_bits;
  uint64_t total_weights;
  double avg_bits_per_weight;
} HbllmBitReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *hbllm_last_error_message(void);

/**
 * Fills `out` with the default configuration.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
HbllmStatus hbllm_config_default(HbllmConfig *out);

/**
 * Copies `rows * cols` row-major floats into a new matrix.
 *
 * # Safety
 * `data` must point to `rows * cols` readable floats (it may be null when the
 * product is zero); `out` must be valid for writes.
 */
HbllmStatus hbllm_matrix_new(size_t rows, size_t cols, const float *data, HbllmMatrix **out);

/**
 * # Safety
 * `m` must be null or a handle from this library not yet freed.
 */
void hbllm_matrix_free(HbllmMatrix *m);

/**
 * # Safety
 * `m` must be a live handle; `rows`/`cols` must be valid for writes.
 */
HbllmStatus hbllm_matrix_shape(const HbllmMatrix *m, size_t *rows, size_t *cols);

/**
 * Copies the row-major contents into `out`, which must hold `len` floats and
 * `len` must equal `rows * cols`.
 *
 * # Safety
 * `m` must be a live handle; `out` must be valid for `len` float writes.
 */
HbllmStatus hbllm_matrix_read(const HbllmMatrix *m, float *out, size_t len);

/**
 * Quantizes `w` (`n x m`) against calibration activations `x` (`m x samples`).
 * `w` is not modified.
 *
 * # Safety
 * `w`, `x`, `cfg` must be live; `out` must be valid for writes.
 */
HbllmStatus hbllm_quantize(const HbllmMatrix *w,
                           const HbllmMatrix *x,
                           const HbllmConfig *cfg,
                           HbllmLayer **out);

/**
 * # Safety
 * `layer` must be null or a handle from this library not yet freed.
 */
void hbllm_layer_free(HbllmLayer *layer);

/**
 * # Safety
 * `layer` must be live; `out` must be valid for writes.
 */
HbllmStatus hbllm_dequantize(const HbllmLayer *layer, HbllmMatrix **out);

/**
 * Serializes to an HBQ1 byte buffer released with [`hbllm_buffer_free`].
 *
 * # Safety
 * `layer` must be live; `buf` and `len` must be valid for writes.
 */
HbllmStatus hbllm_layer_encode(const HbllmLayer *layer, uint8_t **buf, size_t *len);

/**
 * # Safety
 * `buf`/`len` must come from [`hbllm_layer_encode`] and not be freed twice.
 */
void hbllm_buffer_free(uint8_t *buf, size_t len);

/**
 * Parses an HBQ1 buffer.
 *
 * # Safety
 * `buf` must point to `len` readable bytes; `out` must be valid for writes.
 */
HbllmStatus hbllm_layer_decode(const uint8_t *buf, size_t len, HbllmLayer **out);

/**
 * # Safety
 * `layer` must be live; `out` must be valid for writes.
 */
HbllmStatus hbllm_layer_bit_report(const HbllmLayer *layer, HbllmBitReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HBLLM_H */
