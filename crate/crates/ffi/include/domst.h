#ifndef DOMST_H
#define DOMST_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DomstStatus {
  DOMST_STATUS_OK = 0,
  DOMST_STATUS_NULL_POINTER = 1,
  DOMST_STATUS_INVALID_ARGUMENT = 2,
  DOMST_STATUS_SHAPE = 3,
  DOMST_STATUS_IO = 4,
  DOMST_STATUS_PARSE = 5,
  DOMST_STATUS_NUMERIC = 6,
  DOMST_STATUS_WORKER_FAILED = 7,
  DOMST_STATUS_PANIC = 8,
} DomstStatus;

typedef enum DomstVariant {
  DOMST_VARIANT_SINGLEHEAD = 0,
  DOMST_VARIANT_SINGLEHEAD_PLUS_P = 1,
  DOMST_VARIANT_MULTIHEAD_PLUS_P = 2,
} DomstVariant;

/*
 A watershed: pixel metadata, daily precipitation and discharge.
 */
typedef struct DomstDataset DomstDataset;

/*
 A model together with the scaling fitted during its last training run.
 */
typedef struct DomstModel DomstModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread; empty after a success.
 The pointer stays valid until the next `domst_*` call on the same thread.
 */
const char *domst_last_error(void);

/*
 Generates a synthetic watershed with the default rain process.

 # Safety
 `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum DomstStatus domst_dataset_generate(size_t pixels,
                                        size_t days,
                                        double noise_rel,
                                        uint64_t seed,
                                        struct DomstDataset **out);

/*
 Loads a watershed directory holding `precip.csv`, `meta.csv` and `discharge.csv`.

 # Safety
 `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum DomstStatus domst_dataset_load(const char *dir, struct DomstDataset **out);

/*
 # Safety
 `dataset` must be a live handle; both out pointers must be writable.
 */
enum DomstStatus domst_dataset_shape(const struct DomstDataset *dataset,
                                     size_t *pixels,
                                     size_t *days);

/*
 # Safety
 `dataset` must be null or a handle not yet freed.
 */
void domst_dataset_free(struct DomstDataset *dataset);

/*
 Builds an untrained model for the dataset's pixels. `variant` is a
 `DomstVariant` value; `heads` is ignored by the single-head variants.

 # Safety
 `dataset` must be a live handle; `out` must be writable.
 */
enum DomstStatus domst_model_new(const struct DomstDataset *dataset,
                                 uint32_t variant,
                                 size_t heads,
                                 uint64_t seed,
                                 struct DomstModel **out);

/*
 Re-initializes and trains the model on the first 80% of the dataset's
 samples with the sequential executor, reporting held-out NSE.

 # Safety
 Handles must be live; `nse_test` may be null.
 */
enum DomstStatus domst_model_train(struct DomstModel *model,
                                   const struct DomstDataset *dataset,
                                   size_t epochs,
                                   double learning_rate,
                                   double *nse_test);

/*
 Predicts discharge for every day that has a full lookback window.
 Writes up to `capacity` values into `buffer` and the required length into
 `len`; returns `Shape` if the buffer is too small.

 # Safety
 `buffer` must have room for `capacity` doubles (may be null when `capacity` is 0).
 */
enum DomstStatus domst_model_predict(const struct DomstModel *model,
                                     const struct DomstDataset *dataset,
                                     double *buffer,
                                     size_t capacity,
                                     size_t *len);

/*
 # Safety
 `model` must be live; `path` NUL-terminated.
 */
enum DomstStatus domst_model_save(const struct DomstModel *model, const char *path);

/*
 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum DomstStatus domst_model_load(const char *path, struct DomstModel **out);

/*
 # Safety
 `model` must be null or a handle not yet freed.
 */
void domst_model_free(struct DomstModel *model);

/*
 Nash-Sutcliffe efficiency of `sim` against `obs`, both of length `n`.

 # Safety
 `sim` and `obs` must point to `n` doubles; `out` must be writable.
 */
enum DomstStatus domst_nse(const double *sim, const double *obs, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOMST_H */
