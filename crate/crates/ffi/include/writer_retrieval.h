#ifndef WRITER_RETRIEVAL_H
#define WRITER_RETRIEVAL_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum WrStatus {
  WR_STATUS_OK = 0,
  WR_STATUS_NULL_POINTER = 1,
  WR_STATUS_INVALID_ARGUMENT = 2,
  WR_STATUS_INPUT_DATA = 3,
  WR_STATUS_BUFFER_TOO_SMALL = 4,
  WR_STATUS_UNDEFINED = 5,
  WR_STATUS_INTERNAL = 6,
  WR_STATUS_PANIC = 7,
} WrStatus;

typedef enum WrFitMode {
  WR_FIT_MODE_CLASSIFICATION = 0,
  WR_FIT_MODE_RETRIEVAL = 1,
} WrFitMode;

typedef enum WrMetric {
  WR_METRIC_MANHATTAN = 0,
  WR_METRIC_EUCLIDEAN = 1,
  WR_METRIC_CHI_SQUARE = 2,
} WrMetric;

typedef enum WrMatrixFormat {
  WR_MATRIX_FORMAT_BINARY = 0,
  WR_MATRIX_FORMAT_CSV = 1,
} WrMatrixFormat;

typedef struct WrDistanceMatrix WrDistanceMatrix;

typedef struct WrManifest WrManifest;

typedef struct WrPcaModel WrPcaModel;

typedef struct WrReport WrReport;

typedef struct WrVectorSet WrVectorSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *wr_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *wr_version(void);

enum WrStatus wr_manifest_load(const char *path, struct WrManifest **out);

size_t wr_manifest_len(const struct WrManifest *m);

void wr_manifest_free(struct WrManifest *m);

/**
 * Length of the descriptor produced for `n_radii` radii.
 */
size_t wr_descriptor_dim(size_t n_radii);

/**
 * LBP descriptor of an 8-bit grayscale buffer (row-major, `width * height`
 * bytes). `radii` may be null for the default radii 1..=12.
 */
enum WrStatus wr_extract_descriptor(const uint8_t *pixels,
                                    size_t width,
                                    size_t height,
                                    const size_t *radii,
                                    size_t n_radii,
                                    bool use_mask,
                                    double *out,
                                    size_t out_len);

/**
 * Builds a set from `n` NUL-terminated ids and an `n * dim` row-major buffer.
 */
enum WrStatus wr_vectors_new(const char *const *ids,
                             size_t n,
                             size_t dim,
                             const double *data,
                             struct WrVectorSet **out);

enum WrStatus wr_vectors_read(const char *path, struct WrVectorSet **out);

enum WrStatus wr_vectors_write(const struct WrVectorSet *set, const char *path);

size_t wr_vectors_len(const struct WrVectorSet *set);

size_t wr_vectors_dim(const struct WrVectorSet *set);

/**
 * Copies row `i` into `out`.
 */
enum WrStatus wr_vectors_row(const struct WrVectorSet *set, size_t i, double *out, size_t out_len);

void wr_vectors_free(struct WrVectorSet *set);

enum WrStatus wr_pca_fit(const struct WrVectorSet *samples,
                         size_t dim,
                         enum WrFitMode mode,
                         struct WrPcaModel **out);

enum WrStatus wr_pca_read(const char *path, struct WrPcaModel **out);

enum WrStatus wr_pca_write(const struct WrPcaModel *model, const char *path);

size_t wr_pca_input_dim(const struct WrPcaModel *model);

size_t wr_pca_k(const struct WrPcaModel *model);

/**
 * Projects one descriptor onto the model's `k` components.
 */
enum WrStatus wr_pca_project(const struct WrPcaModel *model,
                             const double *input,
                             size_t input_len,
                             double *out,
                             size_t out_len);

void wr_pca_free(struct WrPcaModel *model);

/**
 * Signed square root followed by l2 normalization. `degenerate` (may be
 * null) is set when the input was numerically zero.
 */
enum WrStatus wr_hellinger_l2(const double *input,
                              size_t len,
                              double *out,
                              size_t out_len,
                              bool *degenerate);

/**
 * Projects every descriptor with `model` (or self-fits `dim` components
 * when `model` is null) and applies the Hellinger map.
 */
enum WrStatus wr_embed(const struct WrVectorSet *descriptors,
                       const struct WrPcaModel *model,
                       size_t dim,
                       struct WrVectorSet **out);

enum WrStatus wr_distance(const double *a,
                          const double *b,
                          size_t len,
                          enum WrMetric metric,
                          double *out);

/**
 * All-pairs matrix of a vector set. `tile == 0` selects the default.
 */
enum WrStatus wr_distmat_compute(const struct WrVectorSet *set,
                                 enum WrMetric metric,
                                 size_t tile,
                                 struct WrDistanceMatrix **out);

enum WrStatus wr_distmat_read(const char *path, struct WrDistanceMatrix **out);

enum WrStatus wr_distmat_write(const struct WrDistanceMatrix *mtx,
                               const char *path,
                               enum WrMatrixFormat format);

size_t wr_distmat_n(const struct WrDistanceMatrix *mtx);

enum WrStatus wr_distmat_get(const struct WrDistanceMatrix *mtx, size_t i, size_t j, float *out);

void wr_distmat_free(struct WrDistanceMatrix *mtx);

/**
 * Leave-one-image-out evaluation; matrix ids must match the manifest order.
 */
enum WrStatus wr_evaluate(const struct WrDistanceMatrix *mtx,
                          const struct WrManifest *manifest,
                          struct WrReport **out);

/**
 * Mean average precision; `WR_STATUS_UNDEFINED` when no query had a
 * relevant item.
 */
enum WrStatus wr_report_map(const struct WrReport *report, double *out);

enum WrStatus wr_report_top1(const struct WrReport *report, double *out);

size_t wr_report_used_queries(const struct WrReport *report);

size_t wr_report_excluded_queries(const struct WrReport *report);

void wr_report_free(struct WrReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WRITER_RETRIEVAL_H */
