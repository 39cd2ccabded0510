#ifndef ASYMLAB_H
#define ASYMLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AsymStatus {
  ASYM_STATUS_OK = 0,
  ASYM_STATUS_NULL_POINTER = 1,
  ASYM_STATUS_INVALID_ARGUMENT = 2,
  ASYM_STATUS_DIMENSION = 3,
  ASYM_STATUS_INFEASIBLE = 4,
  ASYM_STATUS_REJECTION_LIMIT = 5,
  ASYM_STATUS_NON_FINITE = 6,
  ASYM_STATUS_DIVERGED = 7,
  ASYM_STATUS_NOT_SYMMETRIC = 8,
  ASYM_STATUS_SCHEMA = 9,
  ASYM_STATUS_IO = 10,
  ASYM_STATUS_PANIC = 11,
} AsymStatus;

/**
 * Bank construction mode for [`asym_dataset_generate`]'s `mode` argument.
 */
typedef enum AsymFeatureMode {
  ASYM_FEATURE_MODE_EXACT_NORM = 0,
  ASYM_FEATURE_MODE_RESIDUAL_MEAN = 1,
  ASYM_FEATURE_MODE_FROM_SSM = 2,
} AsymFeatureMode;

/**
 * Opaque dataset handle.
 */
typedef struct AsymDataset AsymDataset;

/**
 * Opaque attention-parameter handle.
 */
typedef struct AsymParams AsymParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated
 * to `cap`) into `buf` and returns the full message length excluding the
 * terminator. Returns 0 when no error has been recorded.
 */
size_t asym_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *asym_version(void);

/**
 * Builds a feature bank (`mode` is an [`AsymFeatureMode`] value) and draws
 * `n` samples: in-distribution, or from the sign-inconsistent test
 * distribution when `ood` is true.
 */
enum AsymStatus asym_dataset_generate(size_t d,
                                      size_t state_dim,
                                      double gamma,
                                      uint32_t mode,
                                      size_t n,
                                      double sigma,
                                      uint64_t seed,
                                      bool ood,
                                      struct AsymDataset **out);

/**
 * Dataset from `n` row-major inputs of length `d` and `n` labels.
 */
enum AsymStatus asym_dataset_from_arrays(const double *xs,
                                         const double *ys,
                                         size_t n,
                                         size_t d,
                                         struct AsymDataset **out);

/**
 * Sample count and input length.
 */
enum AsymStatus asym_dataset_shape(const struct AsymDataset *ds, size_t *n, size_t *d);

/**
 * Copies inputs (`n·d`, row-major) and labels (`n`) into caller buffers.
 */
enum AsymStatus asym_dataset_copy(const struct AsymDataset *ds,
                                  double *xs,
                                  size_t xs_len,
                                  double *ys,
                                  size_t ys_len);

void asym_dataset_free(struct AsymDataset *ds);

/**
 * `m` neurons; `zero_init` pairs them so the initial output is zero.
 */
enum AsymStatus asym_params_init(size_t m, uint64_t seed, bool zero_init, struct AsymParams **out);

/**
 * Parameters from hidden weights `w` and output signs `a` (each ±1).
 */
enum AsymStatus asym_params_from_arrays(const double *w,
                                        const double *a,
                                        size_t m,
                                        struct AsymParams **out);

enum AsymStatus asym_params_m(const struct AsymParams *p, size_t *m);

/**
 * Copies hidden weights and output signs (each of length `m`).
 */
enum AsymStatus asym_params_copy(const struct AsymParams *p, double *w, double *a, size_t m);

void asym_params_free(struct AsymParams *p);

enum AsymStatus asym_forward(const struct AsymParams *p, const double *x, size_t d, double *out);

/**
 * `½ Σ_i (F_i − y_i)²`.
 */
enum AsymStatus asym_loss(const struct AsymParams *p, const struct AsymDataset *ds, double *out);

/**
 * Gradient of the loss with respect to the `m` hidden weights.
 */
enum AsymStatus asym_grad(const struct AsymParams *p,
                          const struct AsymDataset *ds,
                          double *grad,
                          size_t m);

/**
 * Full-batch gradient descent; writes a new handle to `out` and the final
 * loss to `final_loss` (may be null). The input handle is unchanged.
 */
enum AsymStatus asym_train(const struct AsymParams *p,
                           const struct AsymDataset *ds,
                           double eta,
                           size_t steps,
                           struct AsymParams **out,
                           double *final_loss);

/**
 * Smallest eigenvalue of the tangent kernel on `ds`.
 */
enum AsymStatus asym_kernel_lambda_min(const struct AsymParams *p,
                                       const struct AsymDataset *ds,
                                       double *out);

/**
 * Gradient of `Σ (softmax(XWXᵀ) X W_V ⊙ G)` with respect to `W`. `x`, `g`
 * are `l × d`, `w`, `w_v` and `out` are `d × d`, all row-major.
 */
enum AsymStatus asym_multidim_grad(const double *x,
                                   const double *w,
                                   const double *w_v,
                                   const double *g,
                                   size_t l,
                                   size_t d,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASYMLAB_H */
