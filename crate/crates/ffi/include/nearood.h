#ifndef NEAROOD_H
#define NEAROOD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Status codes. 2, 3 and 4 match the exit codes of the `nearood` binary.
 */
typedef enum NoodStatus {
  NOOD_STATUS_OK = 0,
  /**
   * Null pointer, invalid path string or size overflow.
   */
  NOOD_STATUS_INVALID_ARGUMENT = 1,
  NOOD_STATUS_CONFIG = 2,
  NOOD_STATUS_DATA = 3,
  NOOD_STATUS_NUMERICAL = 4,
  NOOD_STATUS_PANIC = 5,
} NoodStatus;

typedef enum NoodScoreMethod {
  NOOD_SCORE_METHOD_MD = 0,
  NOOD_SCORE_METHOD_RMD = 1,
} NoodScoreMethod;

typedef enum NoodPositive {
  NOOD_POSITIVE_ID = 0,
  NOOD_POSITIVE_OOD = 1,
} NoodPositive;

/**
 * Trained classifier, used to turn raw inputs into penultimate-layer features.
 */
typedef struct NoodClassifier NoodClassifier;

/**
 * Fitted class-conditional Gaussian detector.
 */
typedef struct NoodModel NoodModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *nood_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *nood_version(void);

/**
 * Fits the detector on `rows × dim` features with labels in `[0, class_count)`.
 * `separate_background` selects a separately estimated background covariance for RMD.
 *
 * # Safety
 * Pointers must be valid for the stated sizes. `out` receives a new handle.
 */
enum NoodStatus nood_model_fit(const double *features,
                               const int64_t *labels,
                               size_t rows,
                               size_t dim,
                               size_t class_count,
                               bool separate_background,
                               struct NoodModel **out);

/**
 * # Safety
 * `model` must be null or a handle from this library that has not been freed.
 */
void nood_model_free(struct NoodModel *model);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` receives a new handle.
 */
enum NoodStatus nood_model_load(const char *path, struct NoodModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated UTF-8 string.
 */
enum NoodStatus nood_model_save(const struct NoodModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle; out-pointers must be valid.
 */
enum NoodStatus nood_model_dims(const struct NoodModel *model,
                                size_t *feature_dim,
                                size_t *class_count);

/**
 * Writes one score per row into `scores` (length `rows`). Higher means more in-distribution.
 *
 * # Safety
 * `model` must be a live handle; arrays must be valid for the stated sizes.
 */
enum NoodStatus nood_model_score(const struct NoodModel *model,
                                 enum NoodScoreMethod method,
                                 const double *features,
                                 size_t rows,
                                 size_t dim,
                                 double *scores);

/**
 * Squared Mahalanobis distance of `z` to class `class`.
 *
 * # Safety
 * `model` must be a live handle; `z` must hold `dim` values.
 */
enum NoodStatus nood_model_mahalanobis(const struct NoodModel *model,
                                       const double *z,
                                       size_t dim,
                                       size_t class_,
                                       double *out);

/**
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` receives a new handle.
 */
enum NoodStatus nood_classifier_load(const char *path, struct NoodClassifier **out);

/**
 * # Safety
 * `classifier` must be null or a live handle.
 */
void nood_classifier_free(struct NoodClassifier *classifier);

/**
 * # Safety
 * `classifier` must be a live handle; out-pointers must be valid.
 */
enum NoodStatus nood_classifier_dims(const struct NoodClassifier *classifier,
                                     size_t *input_dim,
                                     size_t *feature_dim,
                                     size_t *class_count);

/**
 * Penultimate-layer features of `rows × input_dim` inputs, written row-major
 * into `features` (length `rows × feature_dim`).
 *
 * # Safety
 * `classifier` must be a live handle; arrays must be valid for the stated sizes.
 */
enum NoodStatus nood_classifier_features(const struct NoodClassifier *classifier,
                                         const double *inputs,
                                         size_t rows,
                                         size_t input_dim,
                                         double *features);

/**
 * AUROC with ID as the positive class; ties count one half.
 *
 * # Safety
 * Arrays must be valid for the stated lengths.
 */
enum NoodStatus nood_auroc(const double *id_scores,
                           size_t n_id,
                           const double *ood_scores,
                           size_t n_ood,
                           double *out);

/**
 * Average precision with the chosen positive class.
 *
 * # Safety
 * Arrays must be valid for the stated lengths.
 */
enum NoodStatus nood_aupr(const double *id_scores,
                          size_t n_id,
                          const double *ood_scores,
                          size_t n_ood,
                          enum NoodPositive positive,
                          double *out);

/**
 * Largest threshold that accepts at least `target_tpr` of the ID scores.
 *
 * # Safety
 * `id_scores` must be valid for `n_id` reads.
 */
enum NoodStatus nood_threshold_at_tpr(const double *id_scores,
                                      size_t n_id,
                                      double target_tpr,
                                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NEAROOD_H */
