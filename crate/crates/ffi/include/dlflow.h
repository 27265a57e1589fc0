#ifndef DLFLOW_H
#define DLFLOW_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum DlfStatus {
  DLF_STATUS_OK = 0,
  DLF_STATUS_NULL_ARGUMENT = 1,
  DLF_STATUS_INVALID_UTF8 = 2,
  DLF_STATUS_PARSE = 3,
  DLF_STATUS_NOT_STRATIFIED = 4,
  DLF_STATUS_PLAN = 5,
  DLF_STATUS_ENGINE = 6,
  DLF_STATUS_INVALID_INPUT = 7,
  DLF_STATUS_OUT_OF_RANGE = 8,
  DLF_STATUS_PANIC = 9,
} DlfStatus;

typedef enum DlfConnector {
  DLF_CONNECTOR_MERGE = 0,
  DLF_CONNECTOR_HASH_SORT = 1,
} DlfConnector;

typedef enum DlfAggTree {
  DLF_AGG_TREE_FLAT = 0,
  DLF_AGG_TREE_SQRT_LAYER = 1,
  DLF_AGG_TREE_FANIN = 2,
} DlfAggTree;

typedef struct DlfGraph DlfGraph;

typedef struct DlfModel DlfModel;

typedef struct DlfPoints DlfPoints;

typedef struct DlfProgram DlfProgram;

typedef struct DlfRanks DlfRanks;

/**
 * Cluster shape. Fill with [`dlf_config_default`] before changing fields.
 */
typedef struct DlfConfig {
  uint32_t workers;
  uint32_t partitions_per_worker;
  enum DlfConnector connector;
  enum DlfAggTree agg_tree;
  /**
   * Fan-in when `agg_tree` is `Fanin`.
   */
  uint32_t fanin;
  bool combiner;
  bool deterministic;
  uint32_t max_iters;
} DlfConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string.
 */
const char *dlf_version(void);

/**
 * Message of the last failure on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *dlf_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void dlf_string_free(char *s);

/**
 * # Safety
 * `out` must be writable.
 */
enum DlfStatus dlf_config_default(struct DlfConfig *out);

/**
 * Parses a program. Stratification is checked separately.
 *
 * # Safety
 * `source` must be a nul-terminated string and `out` writable.
 */
enum DlfStatus dlf_program_parse(const char *source, struct DlfProgram **out);

/**
 * # Safety
 * `p` must be null or a handle from [`dlf_program_parse`].
 */
void dlf_program_free(struct DlfProgram *p);

/**
 * Writes whether the program is XY-stratified and, if `report` is not
 * null, the full verdict text.
 *
 * # Safety
 * `p` must be a live handle, `stratified` writable, `report` null or writable.
 */
enum DlfStatus dlf_program_check(const struct DlfProgram *p, int *stratified, char **report);

/**
 * Canonical text of the logical plan.
 *
 * # Safety
 * `p` must be a live handle and `out` writable.
 */
enum DlfStatus dlf_program_logical_plan(const struct DlfProgram *p, char **out);

/**
 * Text of the physical plan for `config`.
 *
 * # Safety
 * `p` and `config` must be valid and `out` writable.
 */
enum DlfStatus dlf_program_physical_plan(const struct DlfProgram *p,
                                         const struct DlfConfig *config,
                                         char **out);

/**
 * Parses adjacency text, one `src dst...` line per vertex.
 *
 * # Safety
 * `source` must be a nul-terminated string and `out` writable.
 */
enum DlfStatus dlf_graph_parse(const char *source, struct DlfGraph **out);

/**
 * # Safety
 * `g` must be a live handle.
 */
size_t dlf_graph_vertex_count(const struct DlfGraph *g);

/**
 * # Safety
 * `g` must be null or a handle from [`dlf_graph_parse`].
 */
void dlf_graph_free(struct DlfGraph *g);

/**
 * Runs PageRank for `supersteps` supersteps.
 *
 * # Safety
 * `g` and `config` must be valid and `out` writable.
 */
enum DlfStatus dlf_pagerank_run(const struct DlfGraph *g,
                                uint32_t supersteps,
                                const struct DlfConfig *config,
                                struct DlfRanks **out);

/**
 * # Safety
 * `r` must be a live handle.
 */
size_t dlf_ranks_len(const struct DlfRanks *r);

/**
 * # Safety
 * `r` must be a live handle.
 */
size_t dlf_ranks_iterations(const struct DlfRanks *r);

/**
 * The `index`-th vertex in ascending id order and its rank.
 *
 * # Safety
 * `r` must be a live handle; `id` and `rank` writable.
 */
enum DlfStatus dlf_ranks_get(const struct DlfRanks *r, size_t index, int64_t *id, double *rank);

/**
 * # Safety
 * `r` must be null or a handle from [`dlf_pagerank_run`].
 */
void dlf_ranks_free(struct DlfRanks *r);

/**
 * Parses labeled sparse points, one `label idx:val ...` line per record.
 *
 * # Safety
 * `source` must be a nul-terminated string and `out` writable.
 */
enum DlfStatus dlf_points_parse(const char *source, struct DlfPoints **out);

/**
 * # Safety
 * `p` must be null or a handle from [`dlf_points_parse`].
 */
void dlf_points_free(struct DlfPoints *p);

/**
 * Batch gradient descent for L2-regularized logistic regression, taking at
 * most `steps` steps.
 *
 * # Safety
 * `p` and `config` must be valid and `out` writable.
 */
enum DlfStatus dlf_bgd_run(const struct DlfPoints *p,
                           double eta,
                           double lambda,
                           uint32_t steps,
                           const struct DlfConfig *config,
                           struct DlfModel **out);

/**
 * # Safety
 * `m` must be a live handle.
 */
size_t dlf_model_dim(const struct DlfModel *m);

/**
 * # Safety
 * `m` must be a live handle.
 */
size_t dlf_model_iterations(const struct DlfModel *m);

/**
 * Copies the weights into `buf`, which must hold `len` doubles with
 * `len >= dlf_model_dim(m)`.
 *
 * # Safety
 * `m` must be a live handle and `buf` valid for `len` writes.
 */
enum DlfStatus dlf_model_copy(const struct DlfModel *m, double *buf, size_t len);

/**
 * # Safety
 * `m` must be null or a handle from [`dlf_bgd_run`].
 */
void dlf_model_free(struct DlfModel *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLFLOW_H */
