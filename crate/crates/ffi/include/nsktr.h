#ifndef NSKTR_H
#define NSKTR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum NsktrStatus {
  NSKTR_STATUS_OK = 0,
  // A required pointer argument was null.
  NSKTR_STATUS_NULL_POINTER = 1,
  // Bad argument value or inconsistent sizes.
  NSKTR_STATUS_INVALID_ARGUMENT = 2,
  // Malformed or unreadable file or data.
  NSKTR_STATUS_DATA_ERROR = 3,
  // The optimizer failed (factorization, non-finite objective, ...).
  NSKTR_STATUS_NUMERICAL_ERROR = 4,
  // A Rust panic was caught at the boundary.
  NSKTR_STATUS_INTERNAL_ERROR = 5,
} NsktrStatus;

// Loss selector for [`nsktr_dataset_new`].
typedef enum NsktrLoss {
  NSKTR_LOSS_LINEAR = 0,
  NSKTR_LOSS_LOGISTIC = 1,
} NsktrLoss;

// Covariate tensors with their responses.
typedef struct NsktrDataset NsktrDataset;

// Trained model with its penalties and fit metadata.
typedef struct NsktrModel NsktrModel;

// Fit settings.
typedef struct NsktrOptions NsktrOptions;

// Dense tensor.
typedef struct NsktrTensor NsktrTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none. The
// pointer stays valid until the next failing call on the same thread.
const char *nsktr_last_error(void);

// Copies `values` (length ∏dims, column-major) into a new tensor.
//
// # Safety
// `dims` must point to `ndims` values and `values` to their product.
enum NsktrStatus nsktr_tensor_new(size_t ndims,
                                  const size_t *dims,
                                  const double *values,
                                  struct NsktrTensor **out);

// # Safety
// `t` must be null or a tensor from this library, not yet freed.
void nsktr_tensor_free(struct NsktrTensor *t);

// Number of modes, or 0 for a null tensor.
//
// # Safety
// `t` must be null or a live tensor.
size_t nsktr_tensor_ndims(const struct NsktrTensor *t);

// Number of entries, or 0 for a null tensor.
//
// # Safety
// `t` must be null or a live tensor.
size_t nsktr_tensor_len(const struct NsktrTensor *t);

// Writes the dims into `out` (capacity `cap`, at least `ndims`).
//
// # Safety
// `t` must be a live tensor and `out` writable for `cap` values.
enum NsktrStatus nsktr_tensor_dims(const struct NsktrTensor *t, size_t *out, size_t cap);

// Copies the values (column-major) into `out` (capacity `cap`).
//
// # Safety
// `t` must be a live tensor and `out` writable for `cap` values.
enum NsktrStatus nsktr_tensor_values(const struct NsktrTensor *t, double *out, size_t cap);

// # Safety
// `file` must be a nul-terminated path.
enum NsktrStatus nsktr_tensor_read(const char *file, struct NsktrTensor **out);

// # Safety
// `t` must be a live tensor and `file` a nul-terminated path.
enum NsktrStatus nsktr_tensor_write(const struct NsktrTensor *t, const char *file);

// Builds a dataset from `n` sample tensors (copied) and `n` responses.
// Logistic responses must be -1 or +1.
//
// # Safety
// `samples` must point to `n` live tensors and `responses` to `n` values.
enum NsktrStatus nsktr_dataset_new(const struct NsktrTensor *const *samples,
                                   size_t n,
                                   const double *responses,
                                   enum NsktrLoss loss,
                                   struct NsktrDataset **out);

// Reads a dataset directory written by the `nsktr simulate` command.
//
// # Safety
// `dir` must be a nul-terminated path.
enum NsktrStatus nsktr_dataset_read(const char *dir, struct NsktrDataset **out);

// # Safety
// `d` must be null or a live dataset.
void nsktr_dataset_free(struct NsktrDataset *d);

// # Safety
// `d` must be null or a live dataset.
size_t nsktr_dataset_len(const struct NsktrDataset *d);

// Default options with the given rank; every mode starts unpenalized.
//
// # Safety
// `out` must be writable.
enum NsktrStatus nsktr_options_new(size_t rank, struct NsktrOptions **out);

// # Safety
// `o` must be null or live options.
void nsktr_options_free(struct NsktrOptions *o);

// Sets the penalties of 0-based `mode`; earlier modes without settings
// stay unpenalized.
//
// # Safety
// `o` must be live options.
enum NsktrStatus nsktr_options_set_mode(struct NsktrOptions *o,
                                        size_t mode,
                                        double lambda1,
                                        double lambda2,
                                        double lambda3,
                                        bool nonneg);

// # Safety
// `o` must be live options.
enum NsktrStatus nsktr_options_set_seed(struct NsktrOptions *o, uint64_t seed);

// Sweep cap and relative-change tolerance of the outer loop.
//
// # Safety
// `o` must be live options.
enum NsktrStatus nsktr_options_set_outer(struct NsktrOptions *o, size_t max_sweeps, double tol);

// ADMM penalty, tolerance and whether ρ is scaled by the design.
//
// # Safety
// `o` must be live options.
enum NsktrStatus nsktr_options_set_admm(struct NsktrOptions *o,
                                        double rho,
                                        double tol,
                                        bool design_scaled);

// Fits a model.
//
// # Safety
// `data` and `opts` must be live; `out` writable.
enum NsktrStatus nsktr_fit(const struct NsktrDataset *data,
                           const struct NsktrOptions *opts,
                           struct NsktrModel **out);

// # Safety
// `m` must be null or a live model.
void nsktr_model_free(struct NsktrModel *m);

// # Safety
// `m` must be null or a live model.
size_t nsktr_model_rank(const struct NsktrModel *m);

// # Safety
// `m` must be null or a live model.
size_t nsktr_model_ndims(const struct NsktrModel *m);

// Outer sweeps run by the fit.
//
// # Safety
// `m` must be null or a live model.
size_t nsktr_model_iterations(const struct NsktrModel *m);

// Final objective, or NaN if unknown.
//
// # Safety
// `m` must be null or a live model.
double nsktr_model_objective(const struct NsktrModel *m);

// Copies factor `mode` (I_d x R, column-major) into `out`.
//
// # Safety
// `m` must be live and `out` writable for `cap` values.
enum NsktrStatus nsktr_model_factor(const struct NsktrModel *m,
                                    size_t mode,
                                    double *out,
                                    size_t cap);

// Prediction for one sample: `⟨x, B⟩` (linear) or `Pr(y = 1)` (logistic).
//
// # Safety
// `m` and `x` must be live; `out` writable.
enum NsktrStatus nsktr_model_predict(const struct NsktrModel *m,
                                     const struct NsktrTensor *x,
                                     double *out);

// # Safety
// `file` must be a nul-terminated path; `out` writable.
enum NsktrStatus nsktr_model_read(const char *file, struct NsktrModel **out);

// # Safety
// `m` must be live and `file` a nul-terminated path.
enum NsktrStatus nsktr_model_write(const struct NsktrModel *m, const char *file);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NSKTR_H */
