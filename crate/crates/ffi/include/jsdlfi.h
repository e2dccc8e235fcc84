#ifndef JSDLFI_H
#define JSDLFI_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every function.
typedef enum JsdlfiStatus {
  JSDLFI_STATUS_OK = 0,
  JSDLFI_STATUS_NULL_POINTER = 1,
  JSDLFI_STATUS_INVALID_ARGUMENT = 2,
  JSDLFI_STATUS_CONFIG = 3,
  JSDLFI_STATUS_UNSUPPORTED = 4,
  JSDLFI_STATUS_NUMERICAL = 5,
  JSDLFI_STATUS_BUFFER_TOO_SMALL = 6,
  JSDLFI_STATUS_PANIC = 7,
} JsdlfiStatus;

// Opaque simulator model.
typedef struct JsdlfiModel JsdlfiModel;

// Opaque fitted surrogate.
typedef struct JsdlfiSurrogate JsdlfiSurrogate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next failing call on the same thread.
const char *jsdlfi_last_error_message(void);

// Builds a model from its JSON description, e.g.
// `{"model": "softmax_decay", "params": {"k": 5}}`.
//
// # Safety
// `json` must be a valid NUL-terminated string and `out` a valid pointer.
enum JsdlfiStatus jsdlfi_model_from_json(const char *json, struct JsdlfiModel **out);

// Releases a model. NULL is ignored.
//
// # Safety
// `model` must come from `jsdlfi_model_from_json` and not be used afterwards.
void jsdlfi_model_free(struct JsdlfiModel *model);

// Parameter dimension, category count and epoch count of a model.
//
// # Safety
// `model` must be a live handle; the out pointers must be valid.
enum JsdlfiStatus jsdlfi_model_shape(const struct JsdlfiModel *model,
                                     uintptr_t *dim,
                                     uintptr_t *k,
                                     uintptr_t *epochs);

// Simulates `n` draws per epoch at `theta`, seeded by `(seed, stream)`.
// Writes `epochs * k` counts, epoch-major, to `out`.
//
// # Safety
// `theta` must hold `theta_len` values and `out` room for `out_len` counts.
enum JsdlfiStatus jsdlfi_simulate(const struct JsdlfiModel *model,
                                  const double *theta,
                                  uintptr_t theta_len,
                                  uint64_t n,
                                  uint64_t seed,
                                  uint64_t stream,
                                  uint64_t *out,
                                  uintptr_t out_len);

// Jensen-Shannon divergence of two length-`k` probability vectors with
// mixing weight `pi`.
//
// # Safety
// `p` and `q` must hold `k` values; `out` must be valid.
enum JsdlfiStatus jsdlfi_jsd(const double *p, const double *q, uintptr_t k, double pi, double *out);

// Exact expectation of JSD(p_hat, Q) where `n·Q` is multinomial with
// probabilities `p_theta`.
//
// # Safety
// `p_hat` and `p_theta` must hold `k` values; `out` must be valid.
enum JsdlfiStatus jsdlfi_exact_expected_jsd(const double *p_hat,
                                            const double *p_theta,
                                            uintptr_t k,
                                            uint64_t n,
                                            double pi,
                                            double *out);

// Single-epoch test statistic from an expected JSD, the observed size and
// the simulated (or effective) size.
//
// # Safety
// `out` must be valid.
enum JsdlfiStatus jsdlfi_test_statistic(double expected_jsd,
                                        double n_obs,
                                        double n_eff,
                                        uintptr_t k,
                                        double pi,
                                        double *out);

// Quantile of the χ² distribution with `dof` degrees of freedom.
//
// # Safety
// `out` must be valid.
enum JsdlfiStatus jsdlfi_chi2_quantile(double q, uint32_t dof, double *out);

// Loads a surrogate saved by the `bolfi` command (the `surrogate` field of
// its JSON report) or by `GpSurrogate::to_json`.
//
// # Safety
// `json` must be a valid NUL-terminated string and `out` a valid pointer.
enum JsdlfiStatus jsdlfi_surrogate_from_json(const char *json, struct JsdlfiSurrogate **out);

// Releases a surrogate. NULL is ignored.
//
// # Safety
// `s` must come from `jsdlfi_surrogate_from_json` and not be used afterwards.
void jsdlfi_surrogate_free(struct JsdlfiSurrogate *s);

// Posterior mean and variance in normalized units, and the denormalized
// expected JSD, at `theta`. Any of the out pointers may be NULL.
//
// # Safety
// `s` must be a live handle and `theta` must hold `theta_len` values.
enum JsdlfiStatus jsdlfi_surrogate_predict(const struct JsdlfiSurrogate *s,
                                           const double *theta,
                                           uintptr_t theta_len,
                                           double *mean,
                                           double *variance,
                                           double *expected_jsd);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JSDLFI_H */
