#ifndef PFN_H
#define PFN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum PfnStatus {
  PFN_STATUS_OK = 0,
  PFN_STATUS_NULL_POINTER = 1,
  PFN_STATUS_INVALID_ARGUMENT = 2,
  PFN_STATUS_SHAPE_MISMATCH = 3,
  PFN_STATUS_IO = 4,
  PFN_STATUS_CHECKPOINT = 5,
  PFN_STATUS_CONFIG_MISMATCH = 6,
  PFN_STATUS_EMPTY_MASK = 7,
  PFN_STATUS_NON_FINITE = 8,
  // A Rust panic was caught at the boundary.
  PFN_STATUS_INTERNAL = 9,
} PfnStatus;

// Opaque model handle.
typedef struct PfnModel PfnModel;

// Metric suite for one prediction.
typedef struct PfnMetrics {
  double rel;
  double sq_rel;
  double rms;
  double rms_log;
  double delta1;
  double delta2;
  double delta3;
  size_t n_valid;
} PfnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after success.
// Valid until the next call into this library on the same thread.
const char *pfn_last_error(void);

// Loads a checkpoint into a new handle.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum PfnStatus pfn_model_load(const char *path, struct PfnModel **out);

// Freshly initialized model for `side x side` inputs with the reference
// cut-offs rescaled to that size.
//
// # Safety
// `out` must be a valid pointer.
enum PfnStatus pfn_model_new(size_t side, uint64_t seed, struct PfnModel **out);

// # Safety
// `model` must be null or a handle from this library not yet freed.
void pfn_model_free(struct PfnModel *model);

// # Safety
// `model` must be a live handle and `path` NUL-terminated.
enum PfnStatus pfn_model_save(const struct PfnModel *model, const char *path);

// # Safety
// `model` must be a live handle; outputs must be valid pointers.
enum PfnStatus pfn_model_input_size(const struct PfnModel *model, size_t *height, size_t *width);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum PfnStatus pfn_model_num_bands(const struct PfnModel *model, size_t *out);

// # Safety
// `model` must be a live handle and `out` a valid pointer.
enum PfnStatus pfn_model_param_count(const struct PfnModel *model, size_t *out);

// Predicts depth for a planar RGB image of `height x width`. Inputs of
// another size than the model's run with rescaled cut-offs.
//
// # Safety
// `rgb` must hold `3 * height * width` values and `depth_out` room for
// `height * width`.
enum PfnStatus pfn_model_predict(const struct PfnModel *model,
                                 const double *rgb,
                                 size_t height,
                                 size_t width,
                                 double *depth_out);

// Splits a planar image into `n_cutoffs + 1` bands written back to back
// into `bands_out` (`(n_cutoffs + 1) * channels * height * width` values).
//
// # Safety
// Pointers must reference arrays of the stated lengths; `cutoffs` may be
// null when `n_cutoffs` is 0.
enum PfnStatus pfn_divide_bands(const double *image,
                                size_t channels,
                                size_t height,
                                size_t width,
                                const double *cutoffs,
                                size_t n_cutoffs,
                                double *bands_out);

// Scores a depth prediction. `mask` may be null, in which case every pixel
// with positive finite ground truth is valid; otherwise nonzero bytes mark
// valid pixels.
//
// # Safety
// `pred`, `gt` (and `mask` when non-null) must hold `height * width` values.
enum PfnStatus pfn_evaluate(const double *pred,
                            const double *gt,
                            const uint8_t *mask,
                            size_t height,
                            size_t width,
                            struct PfnMetrics *out);

// Learning rate at `epoch` for initial rate `lr0` halved every `period`
// epochs; returns NaN for a non-positive `lr0` or zero `period`.
double pfn_lr_schedule(size_t epoch, double lr0, size_t period);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PFN_H */
