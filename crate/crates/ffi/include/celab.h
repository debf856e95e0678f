#ifndef CELAB_H
#define CELAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CelabStatus {
  CELAB_STATUS_OK = 0,
  CELAB_STATUS_NULL_POINTER = 1,
  CELAB_STATUS_INVALID_ARGUMENT = 2,
  CELAB_STATUS_PARSE = 3,
  CELAB_STATUS_IO = 4,
  CELAB_STATUS_NOT_FOUND = 5,
  CELAB_STATUS_NUMERICAL = 6,
  CELAB_STATUS_INTERNAL = 7,
} CelabStatus;

/**
 * Labeled variable pairs.
 */
typedef struct CelabDataset CelabDataset;

/**
 * A trained network loaded from a checkpoint.
 */
typedef struct CelabNetwork CelabNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *celab_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library from the same thread.
 */
const char *celab_last_error(void);

/**
 * Generates `count` labeled synthetic pairs.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
enum CelabStatus celab_dataset_generate(size_t count, uint64_t seed, struct CelabDataset **out);

/**
 * Reads a pairs file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one pointer write.
 */
enum CelabStatus celab_dataset_read(const char *path, struct CelabDataset **out);

/**
 * Number of pairs, or 0 for a NULL handle.
 *
 * # Safety
 * `dataset` must be NULL or a live handle.
 */
size_t celab_dataset_len(const struct CelabDataset *dataset);

/**
 * Id and label value (1, -1, 0, or 2 when unlabeled) of the pair at `index`.
 *
 * # Safety
 * `dataset` must be a live handle; `id` and `label` valid for one write.
 */
enum CelabStatus celab_dataset_pair(const struct CelabDataset *dataset,
                                    size_t index,
                                    uint64_t *id,
                                    int8_t *label);

/**
 * Rasterizes the pair at `index` into 784 row-major pixels in [0, 1].
 *
 * # Safety
 * `dataset` must be a live handle and `pixels` writable for 784 doubles.
 */
enum CelabStatus celab_dataset_rasterize(const struct CelabDataset *dataset,
                                         size_t index,
                                         double *pixels);

/**
 * # Safety
 * `dataset` must be NULL or a handle not yet freed.
 */
void celab_dataset_free(struct CelabDataset *dataset);

/**
 * Loads a network checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one pointer write.
 */
enum CelabStatus celab_network_load(const char *path, struct CelabNetwork **out);

/**
 * Number of output classes, or 0 for a NULL handle.
 *
 * # Safety
 * `network` must be NULL or a live handle.
 */
size_t celab_network_classes(const struct CelabNetwork *network);

/**
 * Writes the 128-d hidden representation of each of `count` images
 * (784 doubles each) into `embeddings` (count * 128 doubles).
 *
 * # Safety
 * `network` must be a live handle; the buffers must have the stated sizes.
 */
enum CelabStatus celab_network_embed(const struct CelabNetwork *network,
                                     const double *images,
                                     size_t count,
                                     double *embeddings);

/**
 * Writes the predicted class index of each image into `classes`.
 *
 * # Safety
 * `network` must be a live handle; the buffers must have the stated sizes.
 */
enum CelabStatus celab_network_predict(const struct CelabNetwork *network,
                                       const double *images,
                                       size_t count,
                                       size_t *classes);

/**
 * # Safety
 * `network` must be NULL or a handle not yet freed.
 */
void celab_network_free(struct CelabNetwork *network);

/**
 * k-nearest-neighbor vote over `n` labeled support vectors of length `dim`.
 * Labels and the result use 1 (A causes B), -1 (B causes A) and 0 (none).
 *
 * # Safety
 * `query` holds `dim` doubles, `support` `n * dim`, `labels` `n`; `out` is one byte.
 */
enum CelabStatus celab_knn_classify(const double *query,
                                    size_t dim,
                                    const double *support,
                                    const int8_t *labels,
                                    size_t n,
                                    size_t k,
                                    int8_t *out);

/**
 * Exact t-SNE of `n` points of length `dim` into `coords` (n * 2 doubles).
 * `final_kl` may be NULL.
 *
 * # Safety
 * `x` holds `n * dim` doubles and `coords` `n * 2`.
 */
enum CelabStatus celab_tsne(const double *x,
                            size_t n,
                            size_t dim,
                            double perplexity,
                            size_t iterations,
                            uint64_t seed,
                            double *coords,
                            double *final_kl);

/**
 * Pearson correlation of two length-`n` vectors with its two-sided t-test p-value.
 *
 * # Safety
 * `a` and `b` hold `n` doubles; `r` and `p_value` are valid for one write.
 */
enum CelabStatus celab_pearson(const double *a,
                               const double *b,
                               size_t n,
                               double *r,
                               double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CELAB_H */
