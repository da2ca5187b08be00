#ifndef BILINEAR_DOF_H
#define BILINEAR_DOF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes. Values are stable.
 */
typedef enum BdStatus {
  BD_STATUS_OK = 0,
  BD_STATUS_DIM_MISMATCH = 1,
  BD_STATUS_NON_FINITE = 2,
  BD_STATUS_RANK_DEFICIENT = 3,
  BD_STATUS_NOT_ORTHONORMAL = 4,
  BD_STATUS_ZERO_MATRIX = 5,
  BD_STATUS_DF_EXHAUSTED = 6,
  BD_STATUS_INDEX_OUT_OF_RANGE = 7,
  BD_STATUS_INVALID_ARGUMENT = 8,
  BD_STATUS_NOT_ORTHOGONAL = 9,
  BD_STATUS_PARSE_ERROR = 10,
  BD_STATUS_DUPLICATE_ID = 11,
  BD_STATUS_ID_MISMATCH = 12,
  BD_STATUS_IO_ERROR = 13,
  BD_STATUS_NULL_POINTER = 100,
  BD_STATUS_PANIC = 101,
} BdStatus;

/*
 df method used by `bd_test_all`. `BD_METHOD_NONE` tests without factor adjustment.
 */
typedef enum BdMethod {
  BD_METHOD_PROPOSED = 0,
  BD_METHOD_GOLLOB = 1,
  BD_METHOD_MANDEL = 2,
  BD_METHOD_NAIVE = 3,
  BD_METHOD_NONE = 4,
} BdMethod;

/*
 Response matrix with optional row and column covariates.
 */
typedef struct BdDataset BdDataset;

/*
 Model fitted with a fixed number of latent factors.
 */
typedef struct BdFit BdFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len - 1` bytes) and returns the full message length.
 */
size_t bd_last_error_message(char *buf, size_t len);

/*
 Library version as a static NUL-terminated string.
 */
const char *bd_version(void);

/*
 Builds a dataset from an `n x m` response `y`, an optional `n x p` row
 covariate matrix `x` and an optional `m x q` column covariate matrix `z`.
 Pass a null pointer or zero width to omit a covariate matrix.
 */
enum BdStatus bd_dataset_new(const double *y,
                             size_t n,
                             size_t m,
                             const double *x,
                             size_t p,
                             const double *z,
                             size_t q,
                             struct BdDataset **out_dataset);

void bd_dataset_free(struct BdDataset *dataset);

/*
 Fits the regression part and removes `r_hat` latent factors.
 */
enum BdStatus bd_fit_new(const struct BdDataset *dataset, size_t r_hat, struct BdFit **out_fit);

void bd_fit_free(struct BdFit *fit);

/*
 Number of responses (columns of `y`).
 */
enum BdStatus bd_fit_responses(const struct BdFit *fit, size_t *out_m);

/*
 Residual sum of squares of response `j` after factor adjustment.
 */
enum BdStatus bd_fit_rss(const struct BdFit *fit, size_t j, double *out_rss);

/*
 Writes the `r_hat` estimated factor strengths into `buf` (length `len >= r_hat`).
 */
enum BdStatus bd_fit_mu_hat(const struct BdFit *fit, double *buf, size_t len);

/*
 Tests row-covariate `coef` for every response. Each output buffer must
 hold `m` values; outputs are in response order. `mandel_reps` and `seed`
 are used only by `BD_METHOD_MANDEL`. With `BD_METHOD_NONE` the fit must
 have `r_hat = 0`.
 */
enum BdStatus bd_test_all(const struct BdFit *fit,
                          size_t coef,
                          enum BdMethod method,
                          size_t mandel_reps,
                          uint64_t seed,
                          double *estimate,
                          double *std_error,
                          double *t_stat,
                          double *df_resid,
                          double *p_value,
                          size_t len);

/*
 Total df of `r_hat` factors fitted to pure noise.
 */
enum BdStatus bd_df_noise(size_t n, size_t m, size_t r_hat, double *out_df);

/*
 df of one factor of strength `mu` with squared loading projection
 `proj_sq`. `out_conjectural` (may be null) is set to 1 on or below the
 phase transition.
 */
enum BdStatus bd_df_signal(size_t n,
                           size_t m,
                           double mu,
                           double sigma_sq,
                           double proj_sq,
                           double *out_df,
                           int32_t *out_conjectural);

/*
 Data-driven df from squared projections of the estimated loadings.
 */
enum BdStatus bd_df_conservative(size_t n,
                                 size_t m,
                                 const double *proj_sqs,
                                 size_t r_hat,
                                 double *out_df);

/*
 Parameter-counting df, spread evenly over responses.
 */
enum BdStatus bd_df_gollob(size_t n, size_t m, size_t r_hat, double *out_df);

/*
 Monte-Carlo Wishart-eigenvalue df. `out_se` (may be null) receives its
 standard error.
 */
enum BdStatus bd_df_mandel(size_t n,
                           size_t m,
                           size_t r_hat,
                           size_t reps,
                           uint64_t seed,
                           double *out_df,
                           double *out_se);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BILINEAR_DOF_H */
