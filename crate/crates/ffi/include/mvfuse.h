#ifndef MVFUSE_H
#define MVFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MvfStatus {
  MVF_STATUS_OK = 0,
  MVF_STATUS_NULL_POINTER = 1,
  MVF_STATUS_INVALID_INPUT = 2,
  MVF_STATUS_DATA = 3,
  MVF_STATUS_NUMERICAL = 4,
  MVF_STATUS_IO = 5,
  MVF_STATUS_PANIC = 6,
} MvfStatus;

// A trained model loaded from a checkpoint.
typedef struct MvfModel MvfModel;

typedef struct MvfScoreTest {
  double u;
  double v;
  double t_score;
  double p_value;
} MvfScoreTest;

typedef struct MvfMetrics {
  double mae;
  double mape;
  double rmse;
  double r2;
} MvfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the
// same thread.
const char *mvf_last_error(void);

// Library version as a static NUL-terminated string.
const char *mvf_version(void);

// Product-of-experts fusion of `n_experts` diagonal Gaussians of dimension
// `dim`. `means` and `log_vars` are `n_experts × dim` row-major; the fused
// mean and log-variance are written to `out_mean` and `out_log_var`.
//
// # Safety
// Input arrays must hold `n_experts * dim` values and outputs `dim` values.
enum MvfStatus mvf_poe_fuse(size_t n_experts,
                            size_t dim,
                            const double *means,
                            const double *log_vars,
                            double *out_mean,
                            double *out_log_var);

// KL divergence from N(mean, exp(log_var)) to the standard normal.
//
// # Safety
// `mean` and `log_var` must hold `dim` values; `out` must be writable.
enum MvfStatus mvf_kl_standard_normal(size_t dim,
                                      const double *mean,
                                      const double *log_var,
                                      double *out);

// Exact Hardy-Weinberg p-value for the three genotype counts.
//
// # Safety
// `out_p` must be writable.
enum MvfStatus mvf_hwe_exact(uint64_t n_hom1, uint64_t n_het, uint64_t n_hom2, double *out_p);

// Score test of one SNP from covariate-adjusted residuals of length `n`.
//
// # Safety
// `y_resid` and `g_resid` must hold `n` values; `out` must be writable.
enum MvfStatus mvf_score_test(size_t n,
                              const double *y_resid,
                              const double *g_resid,
                              struct MvfScoreTest *out);

// MAE, MAPE, RMSE and R² of `n` predictions.
//
// # Safety
// `y` and `y_hat` must hold `n` values; `out` must be writable.
enum MvfStatus mvf_compute_metrics(size_t n,
                                   const double *y,
                                   const double *y_hat,
                                   struct MvfMetrics *out);

// Loads a checkpoint written by `mvfuse train`. On success `*out` owns a
// new handle; on failure it is set to null.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum MvfStatus mvf_model_load(const char *path, struct MvfModel **out);

// Releases a handle from [`mvf_model_load`]. Null is ignored.
//
// # Safety
// `model` must be null or a live handle not freed before.
void mvf_model_free(struct MvfModel *model);

// Number of views, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mvf_model_n_views(const struct MvfModel *model);

// Latent dimension, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mvf_model_latent_dim(const struct MvfModel *model);

// Feature count of view `view`, or 0 when the handle is null or the index
// is out of range.
//
// # Safety
// `model` must be null or a live handle.
size_t mvf_model_view_dim(const struct MvfModel *model, size_t view);

// Posterior-mean latent of one subject. `views` holds `n_views` pointers,
// each to that view's scaled features in [0, 1] or null when the view is
// missing. Writes `latent_len` values, which must equal the latent
// dimension.
//
// # Safety
// `model` must be a live handle, each non-null view pointer must hold the
// view's feature count, and `out_latent` must hold `latent_len` values.
enum MvfStatus mvf_model_extract_latent(const struct MvfModel *model,
                                        const double *const *views,
                                        size_t n_views,
                                        double *out_latent,
                                        size_t latent_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVFUSE_H */
