#ifndef FIELDGRAPH_H
#define FIELDGRAPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FgStatus {
  FG_STATUS_OK = 0,
  FG_STATUS_NULL_POINTER = 1,
  FG_STATUS_INVALID_ARGUMENT = 2,
  FG_STATUS_IO = 3,
  FG_STATUS_FORMAT = 4,
  FG_STATUS_SHAPE = 5,
  FG_STATUS_INVARIANT = 6,
  FG_STATUS_BUFFER_TOO_SMALL = 7,
  FG_STATUS_INTERNAL = 8,
} FgStatus;

/**
 * A loaded field graph.
 */
typedef struct FgGraph FgGraph;

/**
 * A GCN model.
 */
typedef struct FgModel FgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fg_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fg_version(void);

/**
 * Loads a graph file written by `build-graph`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FgStatus fg_graph_load(const char *path, struct FgGraph **out);

/**
 * # Safety
 * `graph` must come from [`fg_graph_load`] and not be freed twice. Null is ignored.
 */
void fg_graph_free(struct FgGraph *graph);

/**
 * Total node count (including neutral padding) and real-region count.
 *
 * # Safety
 * `graph` must be a live handle; `n` and `n_real` writable or null.
 */
enum FgStatus fg_graph_node_count(const struct FgGraph *graph, size_t *n, size_t *n_real);

/**
 * Loads a JSON checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FgStatus fg_model_load(const char *path, struct FgModel **out);

/**
 * Freshly initialized model with the default architecture.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum FgStatus fg_model_init(uint64_t seed, struct FgModel **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum FgStatus fg_model_save(const struct FgModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum FgStatus fg_model_param_count(const struct FgModel *model, size_t *out);

/**
 * # Safety
 * `model` must come from a loader or initializer and not be freed twice. Null is ignored.
 */
void fg_model_free(struct FgModel *model);

/**
 * Writes one probability per node (neutral nodes included) into `out`,
 * which must hold at least the graph's total node count.
 *
 * # Safety
 * Handles must be live; `out` must point to `len` writable doubles.
 */
enum FgStatus fg_predict(const struct FgModel *model,
                         const struct FgGraph *graph,
                         double *out,
                         size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FIELDGRAPH_H */
