#ifndef SHAPEFIT_H
#define SHAPEFIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Nonzero values mirror the library's error kinds.
 */
typedef enum ShapefitStatus {
  SHAPEFIT_STATUS_OK = 0,
  SHAPEFIT_STATUS_INVALID_INPUT = 1,
  SHAPEFIT_STATUS_LENGTH_MISMATCH = 2,
  SHAPEFIT_STATUS_BAD_CELL = 3,
  SHAPEFIT_STATUS_MODEL = 4,
  SHAPEFIT_STATUS_CONFIG = 5,
  SHAPEFIT_STATUS_CSV = 6,
  SHAPEFIT_STATUS_IO = 7,
  SHAPEFIT_STATUS_JSON = 8,
  SHAPEFIT_STATUS_NULL_POINTER = 9,
  SHAPEFIT_STATUS_PANIC = 10,
} ShapefitStatus;

/**
 * Shape family of every component.
 */
typedef enum ShapefitMode {
  SHAPEFIT_MODE_UNCONSTRAINED = 0,
  SHAPEFIT_MODE_ISOTONIC = 1,
  SHAPEFIT_MODE_CONVEX = 2,
  SHAPEFIT_MODE_CONVEX_INCREASING = 3,
  SHAPEFIT_MODE_DC = 4,
  SHAPEFIT_MODE_APPROX_CONVEX = 5,
  SHAPEFIT_MODE_TV = 6,
} ShapefitMode;

/**
 * Opaque fitted model.
 */
typedef struct ShapefitModel ShapefitModel;

/**
 * Solver controls. Start from [`shapefit_default_options`].
 */
typedef struct ShapefitOptions {
  double outer_tol;
  size_t max_sweeps;
  double inner_tol;
  size_t inner_max_iter;
} ShapefitOptions;

/**
 * Penalties shared by every component. `lambda_t` only matters for
 * `Tv` and (as LISO) `Isotonic`; `lambda_d` for `Dc` and `ApproxConvex`.
 */
typedef struct ShapefitSpec {
  /**
   * A [`ShapefitMode`] value.
   */
  int32_t mode;
  double lambda_d;
  double lambda_t;
  double lambda_s;
} ShapefitSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *shapefit_version(void);

/**
 * Message of the last failure on this thread, or NULL after a success.
 * The pointer stays valid until the next call into the library.
 */
const char *shapefit_last_error(void);

/**
 * The solver's default controls.
 */
struct ShapefitOptions shapefit_default_options(void);

/**
 * Fits an additive model to `n` rows of `p` column-major covariates.
 * `options` may be NULL for defaults. On success `*out` owns a new model.
 *
 * # Safety
 * `x` must hold `n * p` doubles, `y` `n` doubles, and `out` must be writable.
 */
enum ShapefitStatus shapefit_fit(const double *x,
                                 size_t n,
                                 size_t p,
                                 const double *y,
                                 const struct ShapefitSpec *spec,
                                 const struct ShapefitOptions *options,
                                 struct ShapefitModel **out);

/**
 * Predicts `n` rows of column-major covariates into `out` (length `n`).
 * If `out_of_range` is not NULL it receives, per column, the number of
 * queries clamped to the knot range.
 *
 * # Safety
 * `x` must hold `n * p` doubles with `p` equal to the model's column count;
 * `out` must hold `n` doubles and `out_of_range` (if set) `p` sizes.
 */
enum ShapefitStatus shapefit_predict(const struct ShapefitModel *model,
                                     const double *x,
                                     size_t n,
                                     size_t p,
                                     double *out,
                                     size_t *out_of_range);

/**
 * Writes the model file format used by the command line tool.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum ShapefitStatus shapefit_model_save(const struct ShapefitModel *model, const char *path);

/**
 * Reads a model file. On success `*out` owns a new model.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum ShapefitStatus shapefit_model_load(const char *path, struct ShapefitModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void shapefit_model_free(struct ShapefitModel *model);

/**
 * Number of components (covariate columns); 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t shapefit_model_num_components(const struct ShapefitModel *model);

/**
 * Intercept (the training response mean); NaN for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
double shapefit_model_intercept(const struct ShapefitModel *model);

/**
 * Penalized training objective; NaN for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
double shapefit_model_objective(const struct ShapefitModel *model);

/**
 * Number of nonzero components; 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t shapefit_model_active_count(const struct ShapefitModel *model);

/**
 * Knot count of component `j` (written to `*len`).
 *
 * # Safety
 * `model` must be a live handle and `len` writable.
 */
enum ShapefitStatus shapefit_model_component_len(const struct ShapefitModel *model,
                                                 size_t j,
                                                 size_t *len);

/**
 * Copies component `j`'s knots and values; both buffers hold `len`
 * doubles, which must equal [`shapefit_model_component_len`].
 *
 * # Safety
 * `x` and `f` must hold `len` doubles.
 */
enum ShapefitStatus shapefit_model_component(const struct ShapefitModel *model,
                                             size_t j,
                                             double *x,
                                             double *f,
                                             size_t len);

/**
 * Total-variation denoising of `v` (length `n`) into `out`.
 *
 * # Safety
 * `v` and `out` must hold `n` doubles.
 */
enum ShapefitStatus shapefit_tv_prox(const double *v, size_t n, double lambda, double *out);

/**
 * Projection of `v` onto nondecreasing sequences.
 *
 * # Safety
 * `v` and `out` must hold `n` doubles.
 */
enum ShapefitStatus shapefit_pav_isotonic(const double *v, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAPEFIT_H */
