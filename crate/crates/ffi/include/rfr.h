#ifndef RFR_H
#define RFR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result codes shared by every function.
typedef enum RfrStatus {
  RFR_STATUS_OK = 0,
  RFR_STATUS_NULL_POINTER = 1,
  RFR_STATUS_INVALID_ARGUMENT = 2,
  RFR_STATUS_DIMENSION = 3,
  RFR_STATUS_ZERO_ROW = 4,
  RFR_STATUS_NO_CONVERGENCE = 5,
  RFR_STATUS_PARSE = 6,
  RFR_STATUS_IO = 7,
  RFR_STATUS_CHECK_FAILED = 8,
  RFR_STATUS_PANIC = 9,
  RFR_STATUS_INTERNAL = 10,
} RfrStatus;

// Dense row-major matrix.
typedef struct RfrMatrix RfrMatrix;

// Feed-forward network with a linear classification head.
typedef struct RfrNetwork RfrNetwork;

// Rank metrics of one representation matrix.
typedef struct RfrRankReport RfrRankReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread (empty after a success).
// The pointer stays valid until the next call on the same thread.
const char *rfr_last_error_message(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must come from this library and not have been freed, or be null.
void rfr_string_free(char *s);

// Copies `rows * cols` row-major values into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum RfrStatus rfr_matrix_new(uintptr_t rows,
                              uintptr_t cols,
                              const double *data,
                              struct RfrMatrix **out);

// Reads a matrix in the `rows,cols` header CSV format.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum RfrStatus rfr_matrix_read_csv(const char *path, struct RfrMatrix **out);

// # Safety
// `m` must come from this library and not have been freed, or be null.
void rfr_matrix_free(struct RfrMatrix *m);

// # Safety
// `m` must be a valid matrix handle or null (yields 0).
uintptr_t rfr_matrix_rows(const struct RfrMatrix *m);

// # Safety
// `m` must be a valid matrix handle or null (yields 0).
uintptr_t rfr_matrix_cols(const struct RfrMatrix *m);

// Copies the row-major values into `out`, which holds `len` doubles.
//
// # Safety
// `m` must be a valid handle and `out` must have room for `len` doubles.
enum RfrStatus rfr_matrix_copy_data(const struct RfrMatrix *m, double *out, uintptr_t len);

// Rank, thresholded rank (energy fraction `rho`) and effective rank of `h`.
//
// # Safety
// `h` must be a valid handle; `out` must be writable.
enum RfrStatus rfr_rank_report(const struct RfrMatrix *h, double rho, struct RfrRankReport **out);

// # Safety
// `r` must be a valid report handle or null (yields 0).
uintptr_t rfr_rank_report_rank(const struct RfrRankReport *r);

// # Safety
// `r` must be a valid report handle or null (yields 0).
uintptr_t rfr_rank_report_trank(const struct RfrRankReport *r);

// # Safety
// `r` must be a valid report handle or null (yields NaN).
double rfr_rank_report_erank(const struct RfrRankReport *r);

// Number of eigenvalues in the report.
//
// # Safety
// `r` must be a valid report handle or null (yields 0).
uintptr_t rfr_rank_report_len(const struct RfrRankReport *r);

// Copies the eigenvalues (descending) into `out`, which holds `len` doubles.
//
// # Safety
// `r` must be a valid handle and `out` must have room for `len` doubles.
enum RfrStatus rfr_rank_report_eigenvalues(const struct RfrRankReport *r,
                                           double *out,
                                           uintptr_t len);

// The report as the same JSON the `rfr rank` command prints.
//
// # Safety
// `r` must be a valid handle; `out` must be writable. Free the string with [`rfr_string_free`].
enum RfrStatus rfr_rank_report_json(const struct RfrRankReport *r, char **out);

// # Safety
// `r` must come from this library and not have been freed, or be null.
void rfr_rank_report_free(struct RfrRankReport *r);

// Rank regularizer `Σ λ log λ` of `h` and its gradient with respect to `h`.
//
// # Safety
// `h` must be a valid handle; `loss` and `grad` must be writable.
enum RfrStatus rfr_loss_and_grad(const struct RfrMatrix *h, double *loss, struct RfrMatrix **grad);

// He-initialized network: ReLU hidden layers, identity feature layer.
//
// # Safety
// `hidden` must point to `n_hidden` widths (may be null when `n_hidden` is 0); `out` must be writable.
enum RfrStatus rfr_network_new(uintptr_t input_dim,
                               const uintptr_t *hidden,
                               uintptr_t n_hidden,
                               uintptr_t feature_dim,
                               uintptr_t num_classes,
                               uint64_t seed,
                               struct RfrNetwork **out);

// Restores a network from its JSON checkpoint.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum RfrStatus rfr_network_from_json(const char *json, struct RfrNetwork **out);

// JSON checkpoint of the network.
//
// # Safety
// `net` must be a valid handle; `out` must be writable. Free the string with [`rfr_string_free`].
enum RfrStatus rfr_network_to_json(const struct RfrNetwork *net, char **out);

// Extractor features and head logits for every input row. Either output may be null.
//
// # Safety
// `net` and `inputs` must be valid handles; non-null outputs must be writable.
enum RfrStatus rfr_network_forward(const struct RfrNetwork *net,
                                   const struct RfrMatrix *inputs,
                                   struct RfrMatrix **features,
                                   struct RfrMatrix **logits);

// # Safety
// `net` must be a valid network handle or null (yields 0).
uintptr_t rfr_network_num_classes(const struct RfrNetwork *net);

// # Safety
// `net` must come from this library and not have been freed, or be null.
void rfr_network_free(struct RfrNetwork *net);

// Runs the verification battery for one seed and returns the reports as a
// JSON array. A NaN `tolerance` keeps each check's own tolerance.
// Returns `CheckFailed` (with the JSON still written) when any check fails.
//
// # Safety
// `dims` must point to `n_dims` values; `out` must be writable. Free the string with [`rfr_string_free`].
enum RfrStatus rfr_verify_json(const uintptr_t *dims,
                               uintptr_t n_dims,
                               uintptr_t trials,
                               uint64_t seed,
                               double tolerance,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFR_H */
