#ifndef IDEAL_H
#define IDEAL_H

/* Generated by cbindgen from ideal-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every fallible function.
typedef enum IdealStatus {
  IDEAL_STATUS_OK = 0,
  IDEAL_STATUS_NULL_POINTER = 1,
  IDEAL_STATUS_INVALID_ARGUMENT = 2,
  IDEAL_STATUS_RUNTIME_ERROR = 3,
  IDEAL_STATUS_BUFFER_TOO_SMALL = 4,
  IDEAL_STATUS_PANIC = 5,
} IdealStatus;

// Saliency method selector for `ideal_saliency_map`.
typedef enum IdealSaliencyMethod {
  IDEAL_SALIENCY_METHOD_DEEP_TAYLOR = 0,
  IDEAL_SALIENCY_METHOD_GRAD_CAM = 1,
  IDEAL_SALIENCY_METHOD_GRAD_INPUT = 2,
} IdealSaliencyMethod;

// Opaque trained-classifier handle.
typedef struct IdealClassifier IdealClassifier;

// Opaque dataset handle (generator + label oracle).
typedef struct IdealDataset IdealDataset;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent error on this thread. The pointer stays valid
// until the next failing call on the same thread.
const char *ideal_last_error_message(void);

// Crate version as a static NUL-terminated string.
const char *ideal_version(void);

// Generate a synthetic dataset from a JSON spec (same schema as the CLI's
// `gen --spec` file). On success `*out` owns the handle.
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
enum IdealStatus ideal_dataset_generate(const char *spec_json, struct IdealDataset **out);

// Release a dataset handle. NULL is a no-op.
//
// # Safety
// `ds` must be a pointer previously returned by `ideal_dataset_generate`
// and not yet freed.
void ideal_dataset_free(struct IdealDataset *ds);

// Number of images in the dataset (0 for NULL).
//
// # Safety
// `ds` must be a live dataset handle or NULL.
size_t ideal_dataset_len(const struct IdealDataset *ds);

// Image side length in pixels (images are square).
//
// # Safety
// `ds` must be a live dataset handle or NULL.
size_t ideal_dataset_image_size(const struct IdealDataset *ds);

// Copy the NUL-terminated id of image `index` into `buf`.
//
// # Safety
// `buf` must point to at least `buf_len` writable bytes.
enum IdealStatus ideal_dataset_image_id(const struct IdealDataset *ds,
                                        size_t index,
                                        char *buf,
                                        size_t buf_len);

// Copy image `index`'s pixels (row-major, size*size doubles in [0,1]).
//
// # Safety
// `buf` must point to at least `buf_len` writable doubles.
enum IdealStatus ideal_dataset_image_pixels(const struct IdealDataset *ds,
                                            size_t index,
                                            double *buf,
                                            size_t buf_len);

// Query the oracle for an image's hidden label (0/1). Increments the
// dataset's interaction counter.
//
// # Safety
// `ds` must be live, `id` NUL-terminated, `out_label` valid.
enum IdealStatus ideal_dataset_oracle_label(const struct IdealDataset *ds,
                                            const char *id,
                                            uint8_t *out_label);

// Oracle interactions issued against this dataset so far.
//
// # Safety
// `ds` must be a live dataset handle or NULL.
uint64_t ideal_dataset_query_count(const struct IdealDataset *ds);

// Train the small conv classifier on the dataset's 70% train split (10%
// validation drives early stopping). `train_json` follows the CLI's `train`
// config schema; pass NULL for defaults.
//
// # Safety
// `ds` must be live; `out` a valid pointer; `train_json` NULL or a
// NUL-terminated string.
enum IdealStatus ideal_classifier_train(const struct IdealDataset *ds,
                                        const char *train_json,
                                        struct IdealClassifier **out);

// Release a classifier handle. NULL is a no-op.
//
// # Safety
// `model` must be a pointer from `ideal_classifier_train`, not yet freed.
void ideal_classifier_free(struct IdealClassifier *model);

// Class-1 probability and predicted variance for one image.
//
// # Safety
// `pixels` must hold h*w doubles; out pointers must be valid.
enum IdealStatus ideal_classifier_predict(const struct IdealClassifier *model,
                                          const double *pixels,
                                          size_t h,
                                          size_t w,
                                          double *out_probability,
                                          double *out_sigma2);

// MC-dropout predictive variance with T stochastic passes (seeded).
//
// # Safety
// Pointer arguments as in `ideal_classifier_predict`.
enum IdealStatus ideal_classifier_uncertainty(const struct IdealClassifier *model,
                                              const double *pixels,
                                              size_t h,
                                              size_t w,
                                              size_t t,
                                              uint64_t seed,
                                              double *out_variance);

// Saliency map of an image under a trained model. `target_class` −1 uses
// the model's predicted class. `out_map` receives h*w doubles.
//
// # Safety
// `pixels` must hold h*w doubles and `out_map` h*w writable doubles.
enum IdealStatus ideal_saliency_map(const struct IdealClassifier *model,
                                    const double *pixels,
                                    size_t h,
                                    size_t w,
                                    enum IdealSaliencyMethod method,
                                    int target_class,
                                    double *out_map);

// Histogram-kurtosis informativeness score of a map. Constant maps map the
// −inf sentinel to the most negative finite double.
//
// # Safety
// `values` must hold h*w doubles; `out_score` must be valid.
enum IdealStatus ideal_kurtosis_score(const double *values, size_t h, size_t w, double *out_score);

// First-order features: kurtosis, skewness, entropy, total energy.
// `out4` receives 4 doubles.
//
// # Safety
// `values` must hold h*w doubles; `out4` 4 writable doubles.
enum IdealStatus ideal_first_order_features(const double *values, size_t h, size_t w, double *out4);

// Co-occurrence features: sum entropy, inverse difference normalized,
// difference entropy, maximal correlation coefficient. `out4` receives 4
// doubles.
//
// # Safety
// `values` must hold h*w doubles; `out4` 4 writable doubles.
enum IdealStatus ideal_glcm_features(const double *values, size_t h, size_t w, double *out4);

// 2-D shape features of the largest Otsu component: sphericity, spherical
// disproportion, elongation. `out3` receives 3 doubles;
// `out_degenerate` is set to 1 when the foreground was empty.
//
// # Safety
// `values` must hold h*w doubles; `out3` 3 writable doubles.
enum IdealStatus ideal_shape_features(const double *values,
                                      size_t h,
                                      size_t w,
                                      double *out3,
                                      int *out_degenerate);

// Midrank ROC AUC. Labels must be 0/1 with both classes present.
//
// # Safety
// `scores` and `labels` must hold n elements.
enum IdealStatus ideal_roc_auc(const double *scores,
                               const uint8_t *labels,
                               size_t n,
                               double *out_auc);

// Dice coefficient of two binary masks (non-zero = foreground). Two empty
// masks score 1.
//
// # Safety
// `pred` and `truth` must hold h*w bytes.
enum IdealStatus ideal_dice(const uint8_t *pred,
                            const uint8_t *truth,
                            size_t h,
                            size_t w,
                            double *out_dice);

// nDCG of a candidate ordering against a reference ordering. Both arrays
// rank the same items: entry i holds an item index, most informative first.
//
// # Safety
// `candidate` and `reference` must hold n elements.
enum IdealStatus ideal_ndcg(const uint64_t *candidate,
                            const uint64_t *reference,
                            size_t n,
                            size_t p,
                            double *out_ndcg);

// Two-sided paired t-test p-value over n paired observations.
//
// # Safety
// `a` and `b` must hold n elements.
enum IdealStatus ideal_paired_t_test(const double *a, const double *b, size_t n, double *out_p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IDEAL_H */
