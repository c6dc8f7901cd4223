#ifndef PROBDR_H
#define PROBDR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every call.
typedef enum ProbdrStatus {
  PROBDR_STATUS_OK = 0,
  PROBDR_STATUS_NULL_POINTER = 1,
  PROBDR_STATUS_CONFIG_ERROR = 2,
  PROBDR_STATUS_DATA_ERROR = 3,
  PROBDR_STATUS_NUMERICAL_ERROR = 4,
  PROBDR_STATUS_PANIC = 5,
} ProbdrStatus;

// Laplacian used to turn an adjacency matrix into a graph precision.
typedef enum ProbdrLaplacian {
  PROBDR_LAPLACIAN_ORDINARY = 0,
  PROBDR_LAPLACIAN_NORMALIZED = 1,
} ProbdrLaplacian;

// Smoothness of the graph covariance: (L + beta I)^-1 or exp(-t L).
typedef enum ProbdrSmoothness {
  PROBDR_SMOOTHNESS_MATERN_ONE = 0,
  PROBDR_SMOOTHNESS_MATERN_INF = 1,
} ProbdrSmoothness;

// Opaque dense matrix of doubles.
typedef struct ProbdrMatrix ProbdrMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failed call on this thread, or an empty
// string. The pointer stays valid until the next call on the same thread.
const char *probdr_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *probdr_version(void);

// Copies `rows * cols` row-major doubles into a new matrix handle.
//
// # Safety
// `data` must point to `rows * cols` readable doubles and `out` must be a
// valid location for a handle pointer.
enum ProbdrStatus probdr_matrix_new(size_t rows,
                                    size_t cols,
                                    const double *data,
                                    struct ProbdrMatrix **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `m` must be null or a handle from this library that was not yet freed.
void probdr_matrix_free(struct ProbdrMatrix *m);

// Row count, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t probdr_matrix_rows(const struct ProbdrMatrix *m);

// Column count, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t probdr_matrix_cols(const struct ProbdrMatrix *m);

// Writes the matrix row-major into `out`, which holds `len` doubles.
//
// # Safety
// `m` must be a live handle and `out` must point to `len` writable doubles.
enum ProbdrStatus probdr_matrix_copy_to(const struct ProbdrMatrix *m, double *out, size_t len);

// Embeds the rows of `data` into `q` dimensions.
//
// `algorithm_json` is an algorithm object such as `{"name":"tsne","perplexity":30}`.
// `optimizer_json` may be null for defaults. `out_noise` may be null; it
// receives the fitted noise level of spectral methods and NaN otherwise.
//
// # Safety
// Pointers must be valid; strings must be NUL-terminated.
enum ProbdrStatus probdr_embed_json(const struct ProbdrMatrix *data,
                                    const char *algorithm_json,
                                    size_t q,
                                    uint64_t seed,
                                    const char *optimizer_json,
                                    struct ProbdrMatrix **out_embedding,
                                    double *out_noise);

// Procrustes residual between two embeddings with matching shapes. A
// non-zero `allow_scale` also fits a global scale.
//
// # Safety
// `a` and `b` must be live handles and `out_residual` writable.
enum ProbdrStatus probdr_procrustes(const struct ProbdrMatrix *a,
                                    const struct ProbdrMatrix *b,
                                    int32_t allow_scale,
                                    double *out_residual);

// Graph covariance from a symmetric non-negative adjacency matrix:
// (L + beta I)^-1 or exp(-t L), without the signal variance.
//
// # Safety
// `adjacency` must be a live handle and `out` writable.
enum ProbdrStatus probdr_graph_covariance(const struct ProbdrMatrix *adjacency,
                                          enum ProbdrLaplacian laplacian,
                                          enum ProbdrSmoothness smoothness,
                                          double beta,
                                          double t,
                                          struct ProbdrMatrix **out);

// Predicts the rows of `test` from `train` with the graph Gaussian process
// workflow. `settings_json` may be null for defaults. `out_variance` may be
// null; otherwise it receives a column of per-row predictive variances.
//
// # Safety
// Pointers must be valid; strings must be NUL-terminated.
enum ProbdrStatus probdr_predict(const struct ProbdrMatrix *train,
                                 const struct ProbdrMatrix *test,
                                 const char *settings_json,
                                 uint64_t seed,
                                 struct ProbdrMatrix **out_mean,
                                 struct ProbdrMatrix **out_variance);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROBDR_H */
