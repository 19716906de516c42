#ifndef OODCERT_H
#define OODCERT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OodStatus {
  OOD_STATUS_OK = 0,
  OOD_STATUS_NULL_POINTER = 1,
  OOD_STATUS_INVALID_ARGUMENT = 2,
  OOD_STATUS_FORMAT = 3,
  OOD_STATUS_VALIDATION = 4,
  OOD_STATUS_DEGENERATE_CALIBRATION = 5,
  OOD_STATUS_IO = 6,
  OOD_STATUS_INTERNAL = 7,
  OOD_STATUS_PANIC = 8,
} OodStatus;

typedef enum OodKernel {
  OOD_KERNEL_UNIFORM = 0,
  OOD_KERNEL_GAUSSIAN = 1,
} OodKernel;

/**
 * Latent distribution handle.
 */
typedef struct OodModel OodModel;

/**
 * Calibrated conformal predictor handle.
 */
typedef struct OodPredictor OodPredictor;

/**
 * Result of `oodcert_verify`. All ε fields are already clamped to at most 1.
 */
typedef struct OodVerification {
  uint64_t n_samples;
  uint64_t violations;
  double observed_rate;
  /**
   * Chernoff bound on the β-discounted count.
   */
  double epsilon;
  double epsilon_unadjusted;
  double epsilon_exact;
  double elapsed_seconds;
} OodVerification;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty if none. Owned by
 * the library.
 */
const char *oodcert_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *oodcert_version(void);

/**
 * Loads a latent-model JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OodStatus oodcert_model_load(const char *path, struct OodModel **out);

/**
 * Standard normal model of dimension `dim`.
 *
 * # Safety
 * `out` must be writable.
 */
enum OodStatus oodcert_model_standard_normal(size_t dim, struct OodModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void oodcert_model_free(struct OodModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum OodStatus oodcert_model_dim(const struct OodModel *model, size_t *out);

/**
 * Log density at the `len` coordinates of `x`.
 *
 * # Safety
 * `model` must be a live handle, `x` must point to `len` doubles, and `out` must
 * be writable.
 */
enum OodStatus oodcert_model_log_density(const struct OodModel *model,
                                         const double *x,
                                         size_t len,
                                         double *out);

/**
 * Calibrates a predictor from `n_points` row-major points of dimension `dim`.
 * A `bandwidth` of zero or less selects Scott's rule.
 *
 * # Safety
 * `points` must point to `n_points * dim` doubles and `out` must be writable.
 */
enum OodStatus oodcert_predictor_calibrate(const double *points,
                                           size_t n_points,
                                           size_t dim,
                                           double beta,
                                           enum OodKernel kernel,
                                           double bandwidth,
                                           struct OodPredictor **out);

/**
 * Loads a predictor snapshot and its referenced calibration set.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum OodStatus oodcert_predictor_load(const char *path, struct OodPredictor **out);

/**
 * Releases a predictor. Null is ignored.
 *
 * # Safety
 * `predictor` must come from this library and not be used afterwards.
 */
void oodcert_predictor_free(struct OodPredictor *predictor);

/**
 * # Safety
 * `predictor` must be a live handle; `out` must be writable.
 */
enum OodStatus oodcert_predictor_dim(const struct OodPredictor *predictor, size_t *out);

/**
 * Conformity threshold `t*`.
 *
 * # Safety
 * `predictor` must be a live handle; `out` must be writable.
 */
enum OodStatus oodcert_predictor_threshold(const struct OodPredictor *predictor, double *out);

/**
 * # Safety
 * `predictor` must be a live handle, `x` must point to `len` doubles, and `out`
 * must be writable.
 */
enum OodStatus oodcert_predictor_conformity(const struct OodPredictor *predictor,
                                            const double *x,
                                            size_t len,
                                            double *out);

/**
 * Whether `x` lies in the safe (in-distribution) region.
 *
 * # Safety
 * `predictor` must be a live handle, `x` must point to `len` doubles, and `out`
 * must be writable.
 */
enum OodStatus oodcert_predictor_is_safe(const struct OodPredictor *predictor,
                                         const double *x,
                                         size_t len,
                                         bool *out);

/**
 * Monte-Carlo certification run.
 *
 * # Safety
 * `model` and `predictor` must be live handles; `out` must be writable.
 */
enum OodStatus oodcert_verify(const struct OodModel *model,
                              const struct OodPredictor *predictor,
                              uint64_t n_samples,
                              double delta,
                              uint64_t seed,
                              uint64_t stream_index,
                              size_t workers,
                              struct OodVerification *out);

/**
 * `1 − δ^(1/N)`.
 *
 * # Safety
 * `out` must be writable.
 */
enum OodStatus oodcert_epsilon_no_violations(uint64_t n, double delta, double *out);

/**
 * Chernoff bound for `r` violations among `n` samples.
 *
 * # Safety
 * `out` must be writable.
 */
enum OodStatus oodcert_epsilon_chernoff(uint64_t n, double r, double delta, double *out);

/**
 * Chernoff bound on the `(1 − β)`-discounted count.
 *
 * # Safety
 * `out` must be writable.
 */
enum OodStatus oodcert_epsilon_adjusted(uint64_t n,
                                        uint64_t r,
                                        double delta,
                                        double beta,
                                        double *out);

/**
 * Smallest ε satisfying the binomial scenario condition, by bisection.
 *
 * # Safety
 * `out` must be writable.
 */
enum OodStatus oodcert_exact_epsilon(uint64_t n, uint64_t r, uint64_t d, double delta, double *out);

/**
 * # Safety
 * `out` must be writable.
 */
enum OodStatus oodcert_binomial_condition_holds(uint64_t n,
                                                uint64_t r,
                                                uint64_t d,
                                                double epsilon,
                                                double delta,
                                                bool *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OODCERT_H */
