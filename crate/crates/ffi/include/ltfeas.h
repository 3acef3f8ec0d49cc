#ifndef LTFEAS_H
#define LTFEAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LtfStatus {
  LTF_STATUS_OK = 0,
  LTF_STATUS_NULL_POINTER = 1,
  LTF_STATUS_INVALID_CONFIG = 2,
  LTF_STATUS_DATA_ERROR = 3,
  LTF_STATUS_NUMERICAL_FAILURE = 4,
  LTF_STATUS_UNDEFINED = 5,
  LTF_STATUS_PANIC = 6,
} LtfStatus;

/**
 * Loaded body catalog.
 */
typedef struct LtfCatalog LtfCatalog;

/**
 * Loaded model plus scaler.
 */
typedef struct LtfPredictor LtfPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next call on the same thread.
 */
const char *ltf_last_error(void);

/**
 * Number of columns of the full feature vector.
 */
size_t ltf_feature_count(void);

/**
 * Two-body propagation of `(r0, v0)` by `dt`. Arrays hold 3 values.
 *
 * # Safety
 * All pointers must be valid for 3 doubles.
 */
enum LtfStatus ltf_kepler_propagate(const double *r0,
                                    const double *v0,
                                    double dt,
                                    double *r_out,
                                    double *v_out);

/**
 * Zero-revolution Lambert arc from `r1` to `r2` in `tof`; `prograde`
 * nonzero selects the prograde branch.
 *
 * # Safety
 * All pointers must be valid for 3 doubles.
 */
enum LtfStatus ltf_lambert(const double *r1,
                           const double *r2,
                           double tof,
                           int32_t prograde,
                           double *v1_out,
                           double *v2_out);

/**
 * Weighted F-measure; `Undefined` for negative or NaN inputs. Both inputs
 * zero give 0.
 *
 * # Safety
 * `out` must be valid for one double.
 */
enum LtfStatus ltf_f_measure(double precision, double recall, double k, double *out);

/**
 * Loads a catalog CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for one pointer.
 */
enum LtfStatus ltf_catalog_load(const char *path, struct LtfCatalog **out);

/**
 * Builds the synthetic catalog of `n` bodies.
 *
 * # Safety
 * `out` must be valid for one pointer.
 */
enum LtfStatus ltf_catalog_synth(size_t n, uint64_t seed, struct LtfCatalog **out);

/**
 * # Safety
 * `catalog` must come from this library; `out` valid for one size_t.
 */
enum LtfStatus ltf_catalog_len(const struct LtfCatalog *catalog, size_t *out);

/**
 * # Safety
 * `catalog` must come from this library and not be used afterwards.
 */
void ltf_catalog_free(struct LtfCatalog *catalog);

/**
 * Loads a model file and the scaler it references.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for one pointer.
 */
enum LtfStatus ltf_predictor_load(const char *path, struct LtfPredictor **out);

/**
 * Number of feature columns the model consumes.
 *
 * # Safety
 * `predictor` must come from this library; `out` valid for one size_t.
 */
enum LtfStatus ltf_predictor_input_width(const struct LtfPredictor *predictor, size_t *out);

/**
 * Feasibility probability from a full feature row of
 * `ltf_feature_count()` values.
 *
 * # Safety
 * `row` must be valid for `len` doubles; `out` for one double.
 */
enum LtfStatus ltf_predictor_predict_row(const struct LtfPredictor *predictor,
                                         const double *row,
                                         size_t len,
                                         double *out);

/**
 * Screens one transfer: Lambert reference search on a `grid_step_days`
 * grid, ephemerides at `epoch_mjd`, features, scaler and model.
 *
 * # Safety
 * Handles must come from this library; `out` valid for one double.
 */
enum LtfStatus ltf_predictor_predict_transfer(const struct LtfPredictor *predictor,
                                              const struct LtfCatalog *catalog,
                                              int64_t body1_id,
                                              int64_t body2_id,
                                              double epoch_mjd,
                                              double m0_kg,
                                              double tof_days,
                                              double grid_step_days,
                                              double *out);

/**
 * # Safety
 * `predictor` must come from this library and not be used afterwards.
 */
void ltf_predictor_free(struct LtfPredictor *predictor);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LTFEAS_H */
