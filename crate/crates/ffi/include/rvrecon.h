#ifndef RVRECON_H
#define RVRECON_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum RvStatus {
  RV_STATUS_OK = 0,
  RV_STATUS_NULL_POINTER = 1,
  RV_STATUS_INVALID_ARGUMENT = 2,
  RV_STATUS_PARSE = 3,
  RV_STATUS_IO = 4,
  RV_STATUS_SHAPE = 5,
  RV_STATUS_NUMERIC = 6,
  RV_STATUS_PANIC = 7,
} RvStatus;

// Zero-phase band-pass filter designed for one sampling rate.
typedef struct RvFilter RvFilter;

// Trained reconstruction model.
typedef struct RvModel RvModel;

// Metrics of one prediction against its ground truth.
typedef struct RvMetrics {
  double mae;
  double mse;
  // NaN when `pearson_defined` is false.
  double pearson_r;
  bool pearson_defined;
  double dtw;
} RvMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *rv_last_error(void);

// Library version as a static NUL-terminated string.
const char *rv_version(void);

// RV at `n_frames` frame times `k * tr_s` from a respiratory trace whose
// first sample is at `start_s`.
//
// # Safety
// `samples` must hold `n_samples` values and `out` room for `n_frames`.
enum RvStatus rv_compute(const double *samples,
                         size_t n_samples,
                         double rate_hz,
                         double start_s,
                         double tr_s,
                         size_t n_frames,
                         double window_s,
                         double *out);

// Design a band-pass of total order `order` for `sample_rate_hz`.
//
// # Safety
// `out` must be a valid pointer; on success it receives a handle owned by
// the caller.
enum RvStatus rv_filter_new(double low_hz,
                            double high_hz,
                            size_t order,
                            double sample_rate_hz,
                            struct RvFilter **out);

// Forward-backward filtering of `input` into `output` (both length `n`).
//
// # Safety
// `filter` must come from [`rv_filter_new`]; `input` and `output` must
// hold `n` values and may not overlap.
enum RvStatus rv_filter_apply(const struct RvFilter *filter,
                              const double *input,
                              size_t n,
                              double *output);

// # Safety
// `filter` must be null or come from [`rv_filter_new`], and not be used
// afterwards.
void rv_filter_free(struct RvFilter *filter);

// MAE, MSE, Pearson correlation and DTW distance of `pred` against `truth`.
//
// # Safety
// `pred` and `truth` must hold `n` values; `out` must be valid.
enum RvStatus rv_metrics(const double *pred, const double *truth, size_t n, struct RvMetrics *out);

// Load a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
enum RvStatus rv_model_load(const char *path, struct RvModel **out);

// Input channels the model expects; 0 for a null handle.
//
// # Safety
// `model` must be null or come from [`rv_model_load`].
size_t rv_model_in_channels(const struct RvModel *model);

// Window length in frames; 0 for a null handle.
//
// # Safety
// `model` must be null or come from [`rv_model_load`].
size_t rv_model_window_len(const struct RvModel *model);

// Reconstruct RV for one scan. `channels` is channel-major
// (`n_channels * n_frames`, ROIs first, then motion parameters) and is
// z-scored per channel before prediction. `extrapolated` may be null;
// otherwise it receives 1 for frames without a direct window estimate.
//
// # Safety
// Pointers must be valid for the stated lengths; `model` must come from
// [`rv_model_load`].
enum RvStatus rv_model_predict(const struct RvModel *model,
                               const double *channels,
                               size_t n_channels,
                               size_t n_frames,
                               double tr_s,
                               size_t stride,
                               double *out_rv,
                               uint8_t *extrapolated);

// # Safety
// `model` must be null or come from [`rv_model_load`], and not be used
// afterwards.
void rv_model_free(struct RvModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RVRECON_H */
