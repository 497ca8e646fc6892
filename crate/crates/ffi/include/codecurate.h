#ifndef CODECURATE_H
#define CODECURATE_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

// Per-row outcome of [`cc_consistency_filter`].
typedef enum CcFilterReason {
  CC_FILTER_REASON_KEPT = 0,
  CC_FILTER_REASON_RANK_FAIL = 1,
  CC_FILTER_REASON_THRESHOLD_FAIL = 2,
  CC_FILTER_REASON_BOTH = 3,
} CcFilterReason;

typedef enum CcStatus {
  CC_STATUS_OK = 0,
  CC_STATUS_NULL_ARGUMENT = 1,
  CC_STATUS_INVALID_ARGUMENT = 2,
  CC_STATUS_IO = 3,
  CC_STATUS_DATA = 4,
  CC_STATUS_BACKEND = 5,
  CC_STATUS_PANIC = 6,
} CcStatus;

// Exact top-K′ neighbor lists of a text store against a code store.
typedef struct CcSimilarityCache CcSimilarityCache;

// Unit-normalized vectors with string ids.
typedef struct CcVectorStore CcVectorStore;

// Message of the last failed call on this thread, or NULL. Valid until the
// next call on the same thread.
const char *cc_last_error(void);

// Library version as a static NUL-terminated string.
const char *cc_version(void);

// Unit-norm hashed character-trigram embedding of `text` into `out[dim]`.
//
// # Safety
// `text` must be a NUL-terminated string and `out` must hold `dim` floats.
enum CcStatus cc_stub_embed(const char *text, size_t dim, float *out);

// Curriculum temperature at `step` of a linear schedule over `total_steps`.
//
// # Safety
// `out` must be a valid pointer.
enum CcStatus cc_tau_at(size_t step,
                        size_t total_steps,
                        double tau_start,
                        double tau_end,
                        double *out);

// Builds a store from `n` row-major rows of width `dim`; rows are normalized.
//
// # Safety
// `ids` must hold `n` NUL-terminated strings, `rows` `n * dim` floats, and
// `out` must be a valid pointer.
enum CcStatus cc_store_from_rows(const char *const *ids,
                                 const float *rows,
                                 size_t n,
                                 size_t dim,
                                 struct CcVectorStore **out);

// Loads a store written by the `embed` command.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CcStatus cc_store_load(const char *path, struct CcVectorStore **out);

// # Safety
// `store` must come from this library or be NULL.
size_t cc_store_len(const struct CcVectorStore *store);

// # Safety
// `store` must come from this library or be NULL.
size_t cc_store_dim(const struct CcVectorStore *store);

// # Safety
// `store` must come from this library or be NULL; it is invalid afterwards.
void cc_store_free(struct CcVectorStore *store);

// Top-`k` rows of `store` by cosine to `query[dim]` (normalized here), best
// first, ties by id. Writes row indices and scores and sets `*out_len`.
//
// # Safety
// `query` must hold `dim` floats; `out_indices` and `out_scores` must hold `k` entries.
enum CcStatus cc_search(const struct CcVectorStore *store,
                        const float *query,
                        size_t dim,
                        size_t k,
                        size_t *out_indices,
                        float *out_scores,
                        size_t *out_len);

// Exact top-`k_prime` code neighbors of every text; text `i` pairs with the
// code of the same id.
//
// # Safety
// Both stores must come from this library; `out` must be a valid pointer.
enum CcStatus cc_cache_compute(const struct CcVectorStore *texts,
                               const struct CcVectorStore *codes,
                               size_t k_prime,
                               struct CcSimilarityCache **out);

// Loads a cache written by the `neighbors` command (`.bin` or JSONL).
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CcStatus cc_cache_load(const char *path, struct CcSimilarityCache **out);

// # Safety
// `cache` must come from this library; `path` must be a NUL-terminated string.
enum CcStatus cc_cache_save(const struct CcSimilarityCache *cache, const char *path);

// # Safety
// `cache` must come from this library or be NULL.
size_t cc_cache_len(const struct CcSimilarityCache *cache);

// # Safety
// `cache` must come from this library or be NULL; it is invalid afterwards.
void cc_cache_free(struct CcSimilarityCache *cache);

// Dual consistency filter over every cache row. Writes one reason and one
// positive rank per row (cache order) and the number of kept rows.
//
// # Safety
// `out_reasons` and `out_ranks` must hold `cc_cache_len(cache)` entries.
enum CcStatus cc_consistency_filter(const struct CcSimilarityCache *cache,
                                    size_t k,
                                    float delta,
                                    enum CcFilterReason *out_reasons,
                                    size_t *out_ranks,
                                    size_t *out_kept);

// Draws `m` distinct pool indices by sequential softmax at temperature
// `tau`, keyed by (`seed`, `query_id`, `step`) exactly as the batch sampler.
//
// # Safety
// `scores` must hold `n` floats, `query_id` must be NUL-terminated and
// `out_indices` must hold `m` entries.
enum CcStatus cc_sample_negatives(const float *scores,
                                  size_t n,
                                  size_t m,
                                  double tau,
                                  uint64_t seed,
                                  const char *query_id,
                                  uint64_t step,
                                  size_t *out_indices);

// Parses a generated ranking such as `[2] > [1]` against the window's
// identifiers and repairs it into a permutation written to `out[n]`.
//
// # Safety
// `raw` must be NUL-terminated; `window` and `out` must hold `n` entries.
enum CcStatus cc_parse_and_repair(const char *raw, const uint32_t *window, size_t n, uint32_t *out);

// Metric such as `mrr@10`, `ndcg@10` or `recall@100` of one ranked list.
//
// # Safety
// `ranked` must hold `n` and `relevant` `r` NUL-terminated strings;
// `metric` must be NUL-terminated and `out` valid.
enum CcStatus cc_metric(const char *const *ranked,
                        size_t n,
                        const char *const *relevant,
                        size_t r,
                        const char *metric,
                        double *out);

#endif  /* CODECURATE_H */
