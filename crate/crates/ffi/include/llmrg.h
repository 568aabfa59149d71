#ifndef LLMRG_H
#define LLMRG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every exported function.
 */
typedef enum LlmrgStatus {
  LLMRG_STATUS_OK = 0,
  LLMRG_STATUS_NULL_POINTER = 1,
  LLMRG_STATUS_INVALID_UTF8 = 2,
  LLMRG_STATUS_INVALID_ARGUMENT = 3,
  LLMRG_STATUS_IO = 4,
  LLMRG_STATUS_PARSE = 5,
  LLMRG_STATUS_CHECKPOINT = 6,
  LLMRG_STATUS_BACKEND = 7,
  LLMRG_STATUS_TRAINING = 8,
  LLMRG_STATUS_NOT_FOUND = 9,
  LLMRG_STATUS_PANIC = 10,
} LlmrgStatus;

/**
 * A trained model together with the test view of every user it can score.
 */
typedef struct LlmrgRecommender LlmrgRecommender;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *llmrg_version(void);

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *llmrg_last_error(void);

/**
 * Hit rate and NDCG at `n` for a 1-based `rank`.
 *
 * # Safety
 * `hr` and `ndcg` must be valid for writes.
 */
enum LlmrgStatus llmrg_metrics_at(size_t rank, size_t n, double *hr, double *ndcg);

/**
 * Loads a checkpoint and the graphs it was trained on. `dataset_dir` and
 * `graphs_dir` may be null to use the locations recorded at training time.
 * On success `*out` owns a handle to release with [`llmrg_recommender_free`].
 *
 * # Safety
 * String arguments must be null or nul-terminated; `out` must be valid for writes.
 */
enum LlmrgStatus llmrg_recommender_open(const char *checkpoint,
                                        const char *dataset_dir,
                                        const char *graphs_dir,
                                        struct LlmrgRecommender **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `rec` must be null or a handle from [`llmrg_recommender_open`] not yet freed.
 */
void llmrg_recommender_free(struct LlmrgRecommender *rec);

/**
 * Catalog size and number of users with a test view.
 *
 * # Safety
 * `rec` must be a live handle; the outputs must be valid for writes.
 */
enum LlmrgStatus llmrg_recommender_size(const struct LlmrgRecommender *rec,
                                        size_t *n_items,
                                        size_t *n_users);

/**
 * Item id at a catalog position. The string is owned by the handle.
 *
 * # Safety
 * `rec` must be a live handle and `out` valid for writes.
 */
enum LlmrgStatus llmrg_recommender_item_id(const struct LlmrgRecommender *rec,
                                           size_t position,
                                           const char **out);

/**
 * Writes the user's top `n` catalog positions and their scores, best first
 * with ties broken by position. Both buffers must hold `n` entries; `written`
 * receives min(n, catalog size).
 *
 * # Safety
 * `rec` must be a live handle, `user` nul-terminated, the buffers valid for
 * `n` writes and `written` valid for one.
 */
enum LlmrgStatus llmrg_recommender_top_n(const struct LlmrgRecommender *rec,
                                         const char *user,
                                         size_t n,
                                         size_t *positions,
                                         double *scores,
                                         size_t *written);

/**
 * Runs the command line with `argc` arguments (including the program name)
 * and returns its exit code: 0 success, 1 usage error, 2 runtime error.
 * Output goes to the process's stdout and stderr.
 *
 * # Safety
 * `argv` must hold `argc` nul-terminated strings.
 */
int llmrg_cli_main(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LLMRG_H */
