#ifndef AFFSCALE_H
#define AFFSCALE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum AffStatus {
  AFF_STATUS_OK = 0,
  AFF_STATUS_NULL_POINTER = 1,
  AFF_STATUS_INVALID_ARGUMENT = 2,
  AFF_STATUS_INFEASIBLE = 3,
  AFF_STATUS_DIMENSION_ERROR = 4,
  AFF_STATUS_NUMERICAL_FAILURE = 5,
  AFF_STATUS_IO = 6,
  AFF_STATUS_PANIC = 7,
  AFF_STATUS_VERIFICATION_FAILED = 8,
} AffStatus;

/**
 * Smoothing implementation.
 */
typedef enum AffPath {
  AFF_PATH_FOURIER = 0,
  AFF_PATH_ITER3X3 = 1,
  AFF_PATH_PYRAMID = 2,
} AffPath;

/**
 * Scale normalization of derivative responses.
 */
typedef enum AffNorm {
  AFF_NORM_NONE = 0,
  AFF_NORM_VARIANCE = 1,
  AFF_NORM_LP = 2,
} AffNorm;

/**
 * Opaque image handle.
 */
typedef struct AffImage AffImage;

/**
 * Opaque pyramid handle.
 */
typedef struct AffPyramid AffPyramid;

/**
 * Covariance in eigen form: eigenvalues and major-axis angle (radians).
 */
typedef struct AffCovariance {
  double lambda1;
  double lambda2;
  double alpha;
} AffCovariance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *aff_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aff_version(void);

/**
 * Copies `width * height` row-major samples (row 0 at the top) into a new image.
 *
 * # Safety
 * `data` must point to `width * height` readable doubles; `out` must be writable.
 */
enum AffStatus aff_image_new(size_t width,
                             size_t height,
                             const double *data,
                             struct AffImage **out);

/**
 * Releases an image; null is ignored.
 *
 * # Safety
 * `img` must be null or a handle not yet freed.
 */
void aff_image_free(struct AffImage *img);

/**
 * Width, height and grid spacing of an image.
 *
 * # Safety
 * `img` must be a live handle; output pointers may be null to skip them.
 */
enum AffStatus aff_image_shape(const struct AffImage *img,
                               size_t *width,
                               size_t *height,
                               double *spacing);

/**
 * Copies the samples into `buf`, which must hold `len >= width * height` doubles.
 *
 * # Safety
 * `img` must be a live handle and `buf` writable for `len` doubles.
 */
enum AffStatus aff_image_copy(const struct AffImage *img, double *buf, size_t len);

/**
 * Impulse response of the chosen smoothing path on a `width x height` grid.
 *
 * # Safety
 * `cov` must be readable and `out` writable.
 */
enum AffStatus aff_kernel(const struct AffCovariance *cov,
                          enum AffPath path,
                          size_t width,
                          size_t height,
                          struct AffImage **out);

/**
 * Smooths `img` to total covariance `cov`. On the pyramid path the result
 * is on the coarse grid; its spacing is reported by [`aff_image_shape`].
 *
 * # Safety
 * `img` and `cov` must be valid and `out` writable.
 */
enum AffStatus aff_smooth(const struct AffImage *img,
                          const struct AffCovariance *cov,
                          enum AffPath path,
                          struct AffImage **out);

/**
 * Scale-normalized directional derivative of order `(m, n)` along `phi`.
 * `gamma` and `p` are used by the variance and lp modes; `factor_out` may
 * be null.
 *
 * # Safety
 * `img` and `cov` must be valid, `out` writable, `factor_out` null or writable.
 */
enum AffStatus aff_derivative(const struct AffImage *img,
                              const struct AffCovariance *cov,
                              enum AffPath path,
                              double phi,
                              uint32_t m,
                              uint32_t n,
                              enum AffNorm norm,
                              double gamma,
                              double p,
                              struct AffImage **out,
                              double *factor_out);

/**
 * Builds `num_levels` reduce cycles with unit covariance of eigenvalue
 * ratio `eccentricity` at angle `alpha`.
 *
 * # Safety
 * `img` must be valid and `out` writable.
 */
enum AffStatus aff_pyramid_build(const struct AffImage *img,
                                 uint32_t k_param,
                                 double delta_s,
                                 double eccentricity,
                                 double alpha,
                                 double rho,
                                 uint32_t num_levels,
                                 struct AffPyramid **out);

/**
 * Releases a pyramid; null is ignored.
 *
 * # Safety
 * `pyr` must be null or a handle not yet freed.
 */
void aff_pyramid_free(struct AffPyramid *pyr);

/**
 * Number of stored levels (reduce cycles plus one).
 *
 * # Safety
 * `pyr` must be a live handle and `count` writable.
 */
enum AffStatus aff_pyramid_level_count(const struct AffPyramid *pyr, size_t *count);

/**
 * Copy of level `level` plus its accumulated eigen-scales.
 *
 * # Safety
 * `pyr` must be a live handle, `out` writable, the scale pointers null or writable.
 */
enum AffStatus aff_pyramid_level(const struct AffPyramid *pyr,
                                 size_t level,
                                 struct AffImage **out,
                                 double *lambda1,
                                 double *lambda2);

/**
 * Runs the acceptance checks (all when `only` is null) and stores the
 * number of failures. Returns `VerificationFailed` when any fails.
 *
 * # Safety
 * `only` must be null or a NUL-terminated string; `failures` null or writable.
 */
enum AffStatus aff_verify(const char *only, uint64_t seed, size_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFFSCALE_H */
