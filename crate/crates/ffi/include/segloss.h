/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SEGLOSS_H
#define SEGLOSS_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SeglossStatus {
  SEGLOSS_STATUS_OK = 0,
  SEGLOSS_STATUS_INVALID_INPUT = 1,
  SEGLOSS_STATUS_NUMERICAL_FAILURE = 2,
  SEGLOSS_STATUS_GENERATION_FAILURE = 3,
  SEGLOSS_STATUS_SUBSAMPLE_FAILURE = 4,
  SEGLOSS_STATUS_TRAINING_DIVERGED = 5,
  // Malformed dataset files or metadata.
  SEGLOSS_STATUS_FORMAT = 6,
  SEGLOSS_STATUS_IO = 7,
  SEGLOSS_STATUS_NULL_POINTER = 8,
  SEGLOSS_STATUS_PANIC = 9,
} SeglossStatus;

typedef enum SeglossLossKind {
  SEGLOSS_LOSS_KIND_CE = 0,
  SEGLOSS_LOSS_KIND_DICE = 1,
  SEGLOSS_LOSS_KIND_ADDITIVE = 2,
  SEGLOSS_LOSS_KIND_ML = 3,
  SEGLOSS_LOSS_KIND_CAML = 4,
  SEGLOSS_LOSS_KIND_CAML_CONST_R = 5,
} SeglossLossKind;

typedef enum SeglossShapeFamily {
  SEGLOSS_SHAPE_FAMILY_BLOBS = 0,
  SEGLOSS_SHAPE_FAMILY_VESSELS = 1,
  SEGLOSS_SHAPE_FAMILY_MIXED = 2,
} SeglossShapeFamily;

// Logits and one-hot labels of one batch.
typedef struct SeglossBatch SeglossBatch;

typedef struct SeglossDataset SeglossDataset;

// A loss and its parameter: λ for `Additive`, r for `CamlConstR`,
// ignored otherwise.
typedef struct SeglossLoss {
  enum SeglossLossKind kind;
  double param;
} SeglossLoss;

// Loss value with the batch statistics behind it. `alpha` is NaN for the
// non-adaptive losses.
typedef struct SeglossLossValue {
  double value;
  double ce;
  double dice_loss;
  double p_bar;
  double dice_mean;
  double alpha;
} SeglossLossValue;

typedef struct SeglossGradCheck {
  double max_rel_error;
  double max_abs_error;
  size_t worst_pixel;
  size_t worst_class;
  double tolerance;
  bool passed;
} SeglossGradCheck;

typedef struct SeglossTaskConfig {
  size_t image_size;
  size_t num_classes;
  size_t num_images;
  double foreground_fraction_target;
  enum SeglossShapeFamily shape_family;
  double noise_sigma;
  uint64_t seed;
} SeglossTaskConfig;

typedef struct SeglossDatasetInfo {
  size_t num_images;
  size_t height;
  size_t width;
  size_t num_features;
  size_t num_classes;
  size_t train_images;
  size_t val_images;
  size_t test_images;
} SeglossDatasetInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on the calling thread, or NULL. The
// pointer stays valid until the next failing call on the same thread.
const char *segloss_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *segloss_version(void);

// Copies a batch of `batch × height × width` pixels with `classes` logits
// each (pixel-major) and one class index per pixel.
//
// # Safety
// `logits` must point to `batch·height·width·classes` doubles and
// `labels` to `batch·height·width` integers; `out` must be writable.
enum SeglossStatus segloss_batch_new(size_t batch,
                                     size_t height,
                                     size_t width,
                                     size_t classes,
                                     const double *logits,
                                     const uint32_t *labels,
                                     struct SeglossBatch **out);

// # Safety
// `handle` must be NULL or come from [`segloss_batch_new`].
void segloss_batch_free(struct SeglossBatch *handle);

// Evaluates a loss. When `grad` is non-NULL the gradient with respect to
// every logit is written there; `grad_len` must then equal the logit
// count.
//
// # Safety
// Pointers must be valid for the stated lengths; `grad` may be NULL.
enum SeglossStatus segloss_eval(const struct SeglossBatch *batch,
                                const struct SeglossLoss *loss,
                                struct SeglossLossValue *out,
                                double *grad,
                                size_t grad_len);

// Compares the analytic gradient against central finite differences.
// A negative `tolerance` selects the library default for the loss.
//
// # Safety
// `batch`, `loss` and `out` must be valid pointers.
enum SeglossStatus segloss_gradcheck(const struct SeglossBatch *batch,
                                     const struct SeglossLoss *loss,
                                     double tolerance,
                                     struct SeglossGradCheck *out);

// Default synthetic task: 32×32 vessels, 2 classes, 40 images.
struct SeglossTaskConfig segloss_task_config_default(void);

// # Safety
// `config` and `out` must be valid pointers.
enum SeglossStatus segloss_dataset_generate(const struct SeglossTaskConfig *config,
                                            struct SeglossDataset **out);

// Writes the dataset directory (created if missing).
//
// # Safety
// `dataset` must be a live handle and `dir` a NUL-terminated path.
enum SeglossStatus segloss_dataset_save(const struct SeglossDataset *dataset, const char *dir);

// # Safety
// `dir` must be a NUL-terminated path and `out` writable.
enum SeglossStatus segloss_dataset_load(const char *dir, struct SeglossDataset **out);

// # Safety
// `dataset` and `out` must be valid pointers.
enum SeglossStatus segloss_dataset_info(const struct SeglossDataset *dataset,
                                        struct SeglossDatasetInfo *out);

// Copies the label of every pixel, image-major, into `out` of exactly
// `num_images·height·width` entries.
//
// # Safety
// `dataset` must be a live handle and `out` valid for `len` writes.
enum SeglossStatus segloss_dataset_labels(const struct SeglossDataset *dataset,
                                          uint32_t *out,
                                          size_t len);

// Copies the feature tensor `(images, height, width, features)` into
// `out` of exactly that many entries.
//
// # Safety
// `dataset` must be a live handle and `out` valid for `len` writes.
enum SeglossStatus segloss_dataset_features(const struct SeglossDataset *dataset,
                                            double *out,
                                            size_t len);

// # Safety
// `handle` must be NULL or a dataset handle from this library.
void segloss_dataset_free(struct SeglossDataset *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEGLOSS_H */
