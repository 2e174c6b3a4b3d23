/* C interface for the picl adaptation engine. Generated by cbindgen; do not edit. */

#ifndef PICL_H
#define PICL_H

#pragma once

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible call.
 */
typedef enum PiclStatus {
  PICL_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  PICL_STATUS_NULL_ARGUMENT = 1,
  /**
   * Arguments or configuration failed validation.
   */
  PICL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A prerequisite artifact (dataset, checkpoint) is missing.
   */
  PICL_STATUS_MISSING_ARTIFACT = 3,
  /**
   * Filesystem or parse failure.
   */
  PICL_STATUS_IO = 4,
  /**
   * Training produced non-finite values.
   */
  PICL_STATUS_DIVERGENCE = 5,
  /**
   * Unexpected internal failure.
   */
  PICL_STATUS_INTERNAL_ERROR = 6,
} PiclStatus;

/**
 * Opaque run configuration handle.
 */
typedef struct PiclConfig PiclConfig;

/**
 * Verification metrics for both trial lists, filled by [`picl_evaluate`].
 */
typedef struct PiclEvalMetrics {
  /**
   * Source-trial equal error rate, as a fraction.
   */
  double source_eer;
  double source_min_dcf;
  /**
   * Target-trial equal error rate, as a fraction.
   */
  double target_eer;
  double target_min_dcf;
} PiclEvalMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static library version string.
 */
const char *picl_version(void);

/**
 * Copy the most recent error message for this thread into `buf`.
 * Returns the full message length in bytes (excluding the NUL); when the
 * buffer is too small the message is truncated.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be NULL (then
 * only the required length is returned).
 */
size_t picl_last_error(char *buf, size_t cap);

/**
 * Default configuration with the given root seed. Never NULL.
 */
struct PiclConfig *picl_config_default(uint64_t seed);

/**
 * Parse a key=value config file. Returns NULL on failure; see
 * [`picl_last_error`].
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct PiclConfig *picl_config_load(const char *path);

/**
 * Set one dotted config key (same keys as the config file). The value is
 * validated in context of the full configuration.
 *
 * # Safety
 * `cfg` must be a live handle from a `picl_config_*` constructor; `key`
 * and `value` must be valid NUL-terminated strings.
 */
enum PiclStatus picl_config_set(struct PiclConfig *cfg, const char *key, const char *value);

/**
 * Read one dotted config key as text. Returns the value length in bytes
 * (excluding the NUL) or -1 if the key is unknown.
 *
 * # Safety
 * `cfg` must be a live handle; `key` a valid string; `buf` NULL or at
 * least `cap` writable bytes.
 */
intptr_t picl_config_get(const struct PiclConfig *cfg, const char *key, char *buf, size_t cap);

/**
 * Release a config handle. NULL is a no-op.
 *
 * # Safety
 * `cfg` must be NULL or a handle not yet freed.
 */
void picl_config_free(struct PiclConfig *cfg);

/**
 * Generate the synthetic dataset and trial lists under the output
 * directory (`out_dir` overrides the configured one when non-NULL).
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` NULL or a valid string.
 */
enum PiclStatus picl_generate(struct PiclConfig *cfg, const char *out_dir);

/**
 * Pretrain on the generated source data; writes `pretrained.ckpt`.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` NULL or a valid string.
 */
enum PiclStatus picl_pretrain(struct PiclConfig *cfg, const char *out_dir);

/**
 * Adapt the pretrained model; writes `adapted.ckpt` and `memory.ckpt`.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` NULL or a valid string.
 */
enum PiclStatus picl_adapt(struct PiclConfig *cfg, const char *out_dir);

/**
 * Run the momentum/lambda ablation grid; writes `sweep.csv`.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` NULL or a valid string.
 */
enum PiclStatus picl_sweep(struct PiclConfig *cfg, const char *out_dir);

/**
 * Score both trial lists with the configured checkpoint and fill
 * `metrics`.
 *
 * # Safety
 * `cfg` must be a live handle; `out_dir` NULL or a valid string;
 * `metrics` must point to writable storage.
 */
enum PiclStatus picl_evaluate(struct PiclConfig *cfg,
                              const char *out_dir,
                              struct PiclEvalMetrics *metrics);

/**
 * Equal error rate of a scored trial list (`is_target[i]` nonzero marks a
 * same-identity trial). Outputs are written only on success.
 *
 * # Safety
 * `scores` and `is_target` must hold `n` readable elements; `out_eer`
 * and `out_threshold` must be NULL or writable.
 */
enum PiclStatus picl_eer(const double *scores,
                         const uint8_t *is_target,
                         size_t n,
                         double *out_eer,
                         double *out_threshold);

/**
 * Normalized minimum detection cost of a scored trial list.
 *
 * # Safety
 * Same contracts as [`picl_eer`].
 */
enum PiclStatus picl_min_dcf(const double *scores,
                             const uint8_t *is_target,
                             size_t n,
                             double c_fr,
                             double c_fa,
                             double p_target,
                             double *out_min_dcf,
                             double *out_threshold);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PICL_H */
