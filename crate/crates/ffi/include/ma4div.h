#ifndef MA4DIV_H
#define MA4DIV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Greedy reranking policies that need no trained model.
 */
typedef enum Ma4divBaseline {
  MA4DIV_BASELINE_MMR = 0,
  MA4DIV_BASELINE_XQUAD = 1,
  MA4DIV_BASELINE_ORACLE = 2,
} Ma4divBaseline;

/**
 * Result code of every fallible call.
 */
typedef enum Ma4divStatus {
  MA4DIV_STATUS_OK = 0,
  MA4DIV_STATUS_NULL_POINTER = 1,
  MA4DIV_STATUS_INVALID_ARGUMENT = 2,
  MA4DIV_STATUS_IO = 3,
  MA4DIV_STATUS_PARSE = 4,
  MA4DIV_STATUS_CHECKPOINT = 5,
  MA4DIV_STATUS_NON_FINITE = 6,
  /**
   * The output buffer is shorter than the number of documents.
   */
  MA4DIV_STATUS_BUFFER_TOO_SMALL = 7,
  MA4DIV_STATUS_PANIC = 8,
} Ma4divStatus;

/**
 * A loaded or generated dataset.
 */
typedef struct Ma4divDataset Ma4divDataset;

/**
 * A trained ranker restored from a checkpoint file.
 */
typedef struct Ma4divModel Ma4divModel;

/**
 * Diversity scores of a ranking of one query.
 */
typedef struct Ma4divScores {
  double alpha_ndcg;
  double err_ia;
  double s_recall;
} Ma4divScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *ma4div_last_error(void);

/**
 * Reads a JSON-lines dataset.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum Ma4divStatus ma4div_dataset_load(const char *path, struct Ma4divDataset **out);

/**
 * Builds a synthetic dataset. A coverage rate or signal strength outside
 * its valid range is rejected.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum Ma4divStatus ma4div_dataset_generate(uint64_t seed,
                                          size_t queries,
                                          size_t docs,
                                          size_t subtopics,
                                          size_t embed_dim,
                                          double coverage_rate,
                                          double signal_strength,
                                          struct Ma4divDataset **out);

/**
 * Writes the dataset as JSON lines.
 *
 * # Safety
 * `dataset` must come from this library; `path` must be NUL-terminated.
 */
enum Ma4divStatus ma4div_dataset_save(const struct Ma4divDataset *dataset, const char *path);

/**
 * Number of queries; 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or come from this library.
 */
size_t ma4div_dataset_len(const struct Ma4divDataset *dataset);

/**
 * Candidate documents of one query.
 *
 * # Safety
 * `dataset` must come from this library and `out` be writable.
 */
enum Ma4divStatus ma4div_dataset_num_docs(const struct Ma4divDataset *dataset,
                                          size_t query,
                                          size_t *out);

/**
 * # Safety
 * `dataset` must be NULL or come from this library, and not be used again.
 */
void ma4div_dataset_free(struct Ma4divDataset *dataset);

/**
 * Restores a trained ranker (multi-agent or sequential) from a checkpoint.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
enum Ma4divStatus ma4div_model_load(const char *path, struct Ma4divModel **out);

/**
 * # Safety
 * `model` must be NULL or come from this library, and not be used again.
 */
void ma4div_model_free(struct Ma4divModel *model);

/**
 * Greedy ranking of one query: writes document indices, best first, into
 * `out[0..n]`.
 *
 * # Safety
 * Handles must come from this library; `out` must hold `capacity` values.
 */
enum Ma4divStatus ma4div_model_rank(const struct Ma4divModel *model,
                                    const struct Ma4divDataset *dataset,
                                    size_t query,
                                    size_t *out,
                                    size_t capacity);

/**
 * Ranks one query with a non-learned policy. `lambda` is ignored by the
 * oracle; `alpha` is used only by the oracle.
 *
 * # Safety
 * `dataset` must come from this library; `out` must hold `capacity` values.
 */
enum Ma4divStatus ma4div_baseline_rank(const struct Ma4divDataset *dataset,
                                       size_t query,
                                       enum Ma4divBaseline method,
                                       double lambda,
                                       double alpha,
                                       size_t *out,
                                       size_t capacity);

/**
 * Scores `order[0..len]`, a permutation of the query's documents, at cutoff
 * `k` (at most the document count).
 *
 * # Safety
 * `dataset` must come from this library, `order` must hold `len` values and
 * `out` must be writable.
 */
enum Ma4divStatus ma4div_score_ranking(const struct Ma4divDataset *dataset,
                                       size_t query,
                                       const size_t *order,
                                       size_t len,
                                       double alpha,
                                       size_t k,
                                       struct Ma4divScores *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MA4DIV_H */
