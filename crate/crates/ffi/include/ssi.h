#ifndef SSI_H
#define SSI_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum SsiStatus {
  SSI_STATUS_OK = 0,
  SSI_STATUS_NULL_POINTER = 1,
  SSI_STATUS_INVALID_ARGUMENT = 2,
  SSI_STATUS_INVALID_CONFIG = 3,
  SSI_STATUS_DIMENSION_MISMATCH = 4,
  SSI_STATUS_NUMERICAL = 5,
  SSI_STATUS_IO = 6,
  SSI_STATUS_BUFFER_TOO_SMALL = 7,
  SSI_STATUS_UNSUPPORTED = 8,
  SSI_STATUS_PANIC = 9,
} SsiStatus;

// Opaque particle cloud, row-major `n x dim`.
typedef struct SsiCloud SsiCloud;

// Opaque target density.
typedef struct SsiTarget SsiTarget;

// Unnormalized log-density callback. Must be safe to call from several threads.
typedef double (*SsiLogDensityFn)(const double *x, size_t dim, void *user_data);

// Score callback writing `dim` values into `out`. Must be safe to call from several threads.
typedef void (*SsiScoreFn)(const double *x, size_t dim, double *out, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static description of a status code. Never null.
const char *ssi_status_string(enum SsiStatus status);

// Message of the last failed call on this thread. Empty after a success.
// Valid until the next call into this library from the same thread.
const char *ssi_last_error_message(void);

const char *ssi_version(void);

// Builds a target from a `[target]` table given as TOML or JSON, e.g.
// `name = "mog_grid"` or `{"name": "gaussian", "dim": 3}`.
//
// # Safety
// `spec` must be a NUL-terminated string and `out` a valid pointer.
enum SsiStatus ssi_target_from_spec(const char *spec, struct SsiTarget **out);

// Isotropic Gaussian mixture with `k` components in `dim` dimensions.
// `means` is row-major `k x dim`; `weights` may be null for equal weights.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum SsiStatus ssi_target_gmm_isotropic(size_t k,
                                        size_t dim,
                                        const double *means,
                                        const double *weights,
                                        double variance,
                                        struct SsiTarget **out);

// Target defined by caller-supplied callbacks. The callbacks may be invoked concurrently
// and `user_data` must outlive the returned handle.
//
// # Safety
// `name` must be a NUL-terminated string or null; the callbacks must be valid.
enum SsiStatus ssi_target_from_callbacks(const char *name,
                                         size_t dim,
                                         SsiLogDensityFn log_density,
                                         SsiScoreFn score,
                                         void *user_data,
                                         struct SsiTarget **out);

// # Safety
// `target` must come from this library or be null.
void ssi_target_free(struct SsiTarget *target);

// Dimension of the target, or 0 for a null handle.
//
// # Safety
// `target` must be a live handle or null.
size_t ssi_target_dim(const struct SsiTarget *target);

// # Safety
// `x` must hold `dim` values.
enum SsiStatus ssi_target_log_density(const struct SsiTarget *target,
                                      const double *x,
                                      size_t dim,
                                      double *out);

// # Safety
// `x` and `out` must hold `dim` values.
enum SsiStatus ssi_target_score(const struct SsiTarget *target,
                                const double *x,
                                size_t dim,
                                double *out);

// Exact draws from the target. Fails with `Unsupported` when the target has no sampler.
//
// # Safety
// Handles must be live; `out` must be valid.
enum SsiStatus ssi_target_sample(const struct SsiTarget *target,
                                 size_t n,
                                 uint64_t seed,
                                 struct SsiCloud **out);

// Runs the stochastic-interpolant sampler. `flow_config` is TOML or JSON for the flow
// settings; null selects the defaults.
//
// # Safety
// `flow_config` must be NUL-terminated or null; `out` must be valid.
enum SsiStatus ssi_run(const struct SsiTarget *target,
                       const char *flow_config,
                       uint64_t seed,
                       struct SsiCloud **out);

// Runs a complete experiment config (any method) and returns the final cloud.
//
// # Safety
// `config` must be NUL-terminated; `out` must be valid.
enum SsiStatus ssi_run_experiment(const char *config, struct SsiCloud **out);

// Copies `n * dim` row-major values into a new cloud.
//
// # Safety
// `data` must hold `n * dim` values.
enum SsiStatus ssi_cloud_from_buffer(const double *data,
                                     size_t n,
                                     size_t dim,
                                     struct SsiCloud **out);

// # Safety
// `cloud` must come from this library or be null.
void ssi_cloud_free(struct SsiCloud *cloud);

// # Safety
// `cloud` must be live or null.
size_t ssi_cloud_len(const struct SsiCloud *cloud);

// # Safety
// `cloud` must be live or null.
size_t ssi_cloud_dim(const struct SsiCloud *cloud);

// Copies the positions row-major into `buf`. Fails with `BufferTooSmall` when
// `buf_len < len * dim`.
//
// # Safety
// `buf` must hold `buf_len` values.
enum SsiStatus ssi_cloud_copy(const struct SsiCloud *cloud, double *buf, size_t buf_len);

// Squared MMD (unbiased, Gaussian kernel, median-heuristic bandwidth).
//
// # Safety
// Handles must be live; `out` must be valid.
enum SsiStatus ssi_mmd(const struct SsiCloud *x, const struct SsiCloud *y, double *out);

// Subsampled 2-Wasserstein distance averaged over `repeats` draws.
//
// # Safety
// Handles must be live; `out` must be valid.
enum SsiStatus ssi_w2(const struct SsiCloud *x,
                      const struct SsiCloud *y,
                      size_t subsample,
                      size_t repeats,
                      uint64_t seed,
                      double *out);

// Mean negative log-density of the cloud, normalized when the target knows `log Z`.
//
// # Safety
// Handles must be live; `out` must be valid.
enum SsiStatus ssi_nll(const struct SsiCloud *cloud, const struct SsiTarget *target, double *out);

// Number of target modes holding at least the occupancy threshold of particles.
//
// # Safety
// Handles must be live; `out` must be valid.
enum SsiStatus ssi_modes_found(const struct SsiCloud *cloud,
                               const struct SsiTarget *target,
                               double radius,
                               size_t *out);

// Critical time `T*` for a density `N(0, sigma2 I) * nu` with `nu` supported in a ball of radius `r`.
//
// # Safety
// `out` must be valid for writes.
enum SsiStatus ssi_critical_time(double r,
                                 double sigma2,
                                 double *out);

// Log-Sobolev constant bounds; requires `0 < sigma2 < 1`.
//
// # Safety
// `tight` and `crude` must be valid for writes.
enum SsiStatus ssi_lsi_bound(double r, double sigma2, double *tight, double *crude);

// Bifurcation time of the symmetric two-component mixture with means `+-m`.
//
// # Safety
// `out` must be valid for writes.
enum SsiStatus ssi_bifurcation_time(double m, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSI_H */
