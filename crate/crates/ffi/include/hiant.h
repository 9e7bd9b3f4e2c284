#ifndef HIANT_H
#define HIANT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum HiantStatus {
  HIANT_STATUS_OK = 0,
  HIANT_STATUS_NULL_POINTER = 1,
  HIANT_STATUS_INVALID_ARGUMENT = 2,
  HIANT_STATUS_INVALID_CONFIG = 3,
  HIANT_STATUS_SHAPE = 4,
  HIANT_STATUS_LABEL_OUT_OF_RANGE = 5,
  HIANT_STATUS_EMPTY_INPUT = 6,
  HIANT_STATUS_IO = 7,
  HIANT_STATUS_PARSE = 8,
  HIANT_STATUS_MISSING_CHECKPOINT = 9,
  HIANT_STATUS_CHECKPOINT = 10,
  HIANT_STATUS_CORRUPT_CORPUS = 11,
  HIANT_STATUS_BUFFER_TOO_SMALL = 12,
  HIANT_STATUS_PANIC = 13,
  HIANT_STATUS_INTERNAL = 14,
} HiantStatus;

// A loaded or generated corpus.
typedef struct HiantCorpus HiantCorpus;

// A trained model restored from a run directory.
typedef struct HiantModel HiantModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *hiant_last_error(void);

// Library version as a static NUL-terminated string.
const char *hiant_version(void);

// Generates a synthetic corpus. `spec_toml` may be null for the defaults.
//
// # Safety
// `spec_toml` is null or a NUL-terminated string; `out` is writable.
enum HiantStatus hiant_corpus_generate(const char *spec_toml, struct HiantCorpus **out);

// # Safety
// `dir` is a NUL-terminated path; `out` is writable.
enum HiantStatus hiant_corpus_read(const char *dir, struct HiantCorpus **out);

// # Safety
// `corpus` is a live handle; `dir` is a NUL-terminated path.
enum HiantStatus hiant_corpus_write(const struct HiantCorpus *corpus, const char *dir);

// # Safety
// `corpus` is null or a handle not yet freed.
void hiant_corpus_free(struct HiantCorpus *corpus);

// Number of videos, fine classes, coarse classes and feature width.
//
// # Safety
// `corpus` is a live handle; each out pointer is null or writable.
enum HiantStatus hiant_corpus_shape(const struct HiantCorpus *corpus,
                                    size_t *n_videos,
                                    size_t *n_fine,
                                    size_t *n_coarse,
                                    size_t *feature_dim);

// Frame count of video `index`.
//
// # Safety
// `corpus` is a live handle; `frames` is writable.
enum HiantStatus hiant_corpus_video_frames(const struct HiantCorpus *corpus,
                                           size_t index,
                                           size_t *frames);

// Copies the `frames × feature_dim` features of video `index` into `buf`.
//
// # Safety
// `corpus` is a live handle; `buf` holds `len` doubles.
enum HiantStatus hiant_corpus_video_features(const struct HiantCorpus *corpus,
                                             size_t index,
                                             double *buf,
                                             size_t len);

// Copies the per-frame fine labels of video `index` into `buf`.
//
// # Safety
// `corpus` is a live handle; `buf` holds `len` elements.
enum HiantStatus hiant_corpus_video_fine_labels(const struct HiantCorpus *corpus,
                                                size_t index,
                                                size_t *buf,
                                                size_t len);

// Learning rate at fractional `epoch` under the default training schedule.
//
// # Safety
// `out` is writable.
enum HiantStatus hiant_lr_schedule(double epoch, double *out);

// Mean-over-classes accuracy of `pred` against `truth`.
//
// # Safety
// `pred` and `truth` hold `len` labels; `out` is writable.
enum HiantStatus hiant_moc_accuracy(const size_t *pred,
                                    const size_t *truth,
                                    size_t len,
                                    size_t n_classes,
                                    double *out);

// Temporal consistency losses of a `rows × cols` feature matrix whose rows
// carry `labels`. Any of the out pointers may be null.
//
// # Safety
// `features` holds `rows · cols` doubles, `labels` holds `rows` labels.
enum HiantStatus hiant_tcl_losses(const double *features,
                                  size_t rows,
                                  size_t cols,
                                  const size_t *labels,
                                  double lambda_intra,
                                  double lambda_inter,
                                  double *intra,
                                  double *inter,
                                  double *total);

// Restores the final checkpoint of `seed` from a training run directory.
//
// # Safety
// `run_dir` is a NUL-terminated path; `out` is writable.
enum HiantStatus hiant_model_load(const char *run_dir, uint64_t seed, struct HiantModel **out);

// # Safety
// `model` is null or a handle not yet freed.
void hiant_model_free(struct HiantModel *model);

// Feature width the model expects and the number of fine classes it predicts.
//
// # Safety
// `model` is a live handle; each out pointer is null or writable.
enum HiantStatus hiant_model_dims(const struct HiantModel *model,
                                  size_t *feature_dim,
                                  size_t *n_fine);

// Predicts `horizon` future fine labels from `frames × feature_dim` observed
// features and writes them to `out_labels`.
//
// # Safety
// `model` is a live handle; `features` holds `frames · feature_dim` doubles;
// `out_labels` holds `horizon` elements.
enum HiantStatus hiant_model_predict(const struct HiantModel *model,
                                     const double *features,
                                     size_t frames,
                                     size_t feature_dim,
                                     size_t horizon,
                                     size_t *out_labels);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HIANT_H */
