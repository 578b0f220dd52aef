#ifndef NVMUX_H
#define NVMUX_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  NVMUX_STATUS_OK = 0,
  NVMUX_STATUS_NULL_POINTER = 1,
  NVMUX_STATUS_INVALID_ARGUMENT = 2,
  NVMUX_STATUS_IO = 3,
  NVMUX_STATUS_FORMAT = 4,
  NVMUX_STATUS_FIT_FAILED = 5,
  NVMUX_STATUS_PANIC = 6,
} NvmuxStatus;

/**
 * Opaque streaming covariance accumulator.
 */
typedef struct NvmuxCovariance NvmuxCovariance;

/**
 * Opaque frame stack.
 */
typedef struct NvmuxFrames NvmuxFrames;

/**
 * Opaque SLM phase pattern with its synthesis report.
 */
typedef struct NvmuxHologram NvmuxHologram;

typedef struct {
  double lambda0;
  double lambda1;
  double w_minus;
  /**
   * Standard errors of (lambda0, lambda1, w_minus); NaN when singular.
   */
  double std_errors[3];
  double loglik;
  /**
   * Threshold fidelity at the fitted parameters; NaN when degenerate.
   */
  double fidelity;
  /**
   * Counts strictly above this classify as NV⁻.
   */
  uint64_t threshold;
  bool degenerate;
} NvmuxMixtureFit;

typedef struct {
  /**
   * Far-field pixel coordinates.
   */
  double x;
  double y;
  double amplitude;
} NvmuxSpot;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length in bytes. Pass a
 * null `buf` to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t nvmux_last_error(char *buf, size_t len);

/**
 * Excess readout noise from the count mean and variance of the two spin states.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
NvmuxStatus nvmux_readout_noise(double mean0, double var0, double mean1, double var1, double *out);

/**
 * Two-component Poisson mixture fit of per-shot photon counts.
 *
 * # Safety
 * `counts` must point to `n` values; `out` must be valid.
 */
NvmuxStatus nvmux_fit_double_poisson(const uint32_t *counts, size_t n, NvmuxMixtureFit *out);

/**
 * Optimal-threshold charge readout fidelity for Poisson means `lambda0 < lambda1`.
 *
 * # Safety
 * `fidelity` and `threshold` must be valid pointers.
 */
NvmuxStatus nvmux_charge_fidelity(double lambda0,
                                  double lambda1,
                                  double *fidelity,
                                  uint64_t *threshold);

/**
 * Reads an NVFR file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid.
 */
NvmuxStatus nvmux_frames_open(const char *path, NvmuxFrames **out);

/**
 * # Safety
 * `frames` must be a live handle; the output pointers must be valid.
 */
NvmuxStatus nvmux_frames_dims(const NvmuxFrames *frames,
                              size_t *width,
                              size_t *height,
                              size_t *n_frames);

/**
 * Borrowed pointer to frame `index` (row-major, width·height values). Valid
 * until the handle is freed.
 *
 * # Safety
 * `frames` must be a live handle; `out` must be valid.
 */
NvmuxStatus nvmux_frames_data(const NvmuxFrames *frames, size_t index, const uint16_t **out);

/**
 * Thresholded photon counts of the region centred on (x, y) in every frame,
 * using the default camera with `t_pc` and `roi_n` overridden.
 *
 * # Safety
 * `frames` must be a live handle; `out` must hold `len` values, `len` ≥ n_frames.
 */
NvmuxStatus nvmux_frames_threshold_counts(const NvmuxFrames *frames,
                                          double x,
                                          double y,
                                          double t_pc,
                                          size_t roi_n,
                                          uint32_t *out,
                                          size_t len);

/**
 * # Safety
 * `frames` must be null or a handle from [`nvmux_frames_open`] not yet freed.
 */
void nvmux_frames_free(NvmuxFrames *frames);

/**
 * # Safety
 * `out` must be valid.
 */
NvmuxStatus nvmux_cov_new(size_t channels, NvmuxCovariance **out);

/**
 * Adds one shot: `values` holds one value per channel.
 *
 * # Safety
 * `cov` must be a live handle; `values` must point to `len` values.
 */
NvmuxStatus nvmux_cov_push(NvmuxCovariance *cov, const double *values, size_t len);

/**
 * Folds `other` into `into`; `other` is unchanged.
 *
 * # Safety
 * Both must be live, distinct handles.
 */
NvmuxStatus nvmux_cov_merge(NvmuxCovariance *into, const NvmuxCovariance *other);

/**
 * Pearson correlation between channels `i` and `j`, with its shot count.
 *
 * # Safety
 * `cov` must be a live handle; `r` and `n_shots` must be valid.
 */
NvmuxStatus nvmux_cov_correlation(const NvmuxCovariance *cov,
                                  size_t i,
                                  size_t j,
                                  double *r,
                                  uint64_t *n_shots);

/**
 * # Safety
 * `cov` must be null or a handle from [`nvmux_cov_new`] not yet freed.
 */
void nvmux_cov_free(NvmuxCovariance *cov);

/**
 * Weighted Gerchberg-Saxton synthesis for `n_spots` targets on a
 * `width`×`height` grid.
 *
 * # Safety
 * `spots` must point to `n_spots` values; `out` must be valid.
 */
NvmuxStatus nvmux_wgs(const NvmuxSpot *spots,
                      size_t n_spots,
                      size_t width,
                      size_t height,
                      size_t iterations,
                      uint64_t seed,
                      NvmuxHologram **out);

/**
 * Borrowed row-major phases in [0, 2π), valid until the handle is freed.
 *
 * # Safety
 * `holo` must be a live handle; the output pointers must be valid.
 */
NvmuxStatus nvmux_hologram_phases(const NvmuxHologram *holo,
                                  const double **phases,
                                  size_t *width,
                                  size_t *height);

/**
 * min/max achieved spot amplitude relative to the request.
 *
 * # Safety
 * `holo` must be a live handle; `out` must be valid.
 */
NvmuxStatus nvmux_hologram_uniformity(const NvmuxHologram *holo, double *out);

/**
 * Writes the pattern as a PHAS file.
 *
 * # Safety
 * `holo` must be a live handle; `path` a NUL-terminated string.
 */
NvmuxStatus nvmux_hologram_write(const NvmuxHologram *holo, const char *path);

/**
 * # Safety
 * `holo` must be null or a handle from [`nvmux_wgs`] not yet freed.
 */
void nvmux_hologram_free(NvmuxHologram *holo);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NVMUX_H */
