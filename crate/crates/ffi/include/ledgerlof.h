#ifndef LEDGERLOF_H
#define LEDGERLOF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LlofStatus {
  LLOF_STATUS_OK = 0,
  LLOF_STATUS_NULL_POINTER = 1,
  LLOF_STATUS_INVALID_ARGUMENT = 2,
  LLOF_STATUS_IO = 3,
  LLOF_STATUS_PARSE = 4,
  LLOF_STATUS_REFERENCE = 5,
  LLOF_STATUS_CONSISTENCY = 6,
  LLOF_STATUS_INSUFFICIENT_DATA = 7,
  LLOF_STATUS_DEGENERATE = 8,
  LLOF_STATUS_INFEASIBLE = 9,
  LLOF_STATUS_UNKNOWN_NODE = 10,
  LLOF_STATUS_DOMAIN = 11,
  LLOF_STATUS_UNDEFINED = 12,
  LLOF_STATUS_CONFIG = 13,
  LLOF_STATUS_FORMAT = 14,
  LLOF_STATUS_PANIC = 15,
} LlofStatus;

typedef enum LlofAnomalyProfile {
  LLOF_ANOMALY_PROFILE_EXTREME_VALUE = 0,
  LLOF_ANOMALY_PROFILE_RING_CLUSTER = 1,
  LLOF_ANOMALY_PROFILE_BURST_SENDER = 2,
} LlofAnomalyProfile;

typedef enum LlofGraphKind {
  LLOF_GRAPH_KIND_USER = 0,
  LLOF_GRAPH_KIND_TRANSACTION = 1,
} LlofGraphKind;

typedef struct LlofClustering LlofClustering;

typedef struct LlofFeatures LlofFeatures;

typedef struct LlofGraph LlofGraph;

typedef struct LlofLedger LlofLedger;

typedef struct LlofLofResult LlofLofResult;

typedef struct LlofSynthConfig {
  size_t n_users;
  size_t n_tx;
  double degree_exponent;
  double densification_exponent;
  double anomaly_rate;
  enum LlofAnomalyProfile anomaly_profile;
  uint64_t seed;
} LlofSynthConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after success.
 * The pointer stays valid until the next `llof_*` call on the thread.
 */
const char *llof_last_error_message(void);

/**
 * Library version, static string.
 */
const char *llof_version(void);

/**
 * Parses and validates a ledger CSV file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LlofStatus llof_ledger_parse(const char *path, struct LlofLedger **out);

/**
 * Generates a synthetic ledger; planted user ids are available through
 * `llof_ledger_label_count` and `llof_ledger_label`.
 *
 * # Safety
 * `cfg` must point to a valid config; `out` must be writable.
 */
enum LlofStatus llof_synth_generate(const struct LlofSynthConfig *cfg, struct LlofLedger **out);

/**
 * Writes the ledger as CSV.
 *
 * # Safety
 * `ledger` must be a live handle; `path` a NUL-terminated string.
 */
enum LlofStatus llof_ledger_write(const struct LlofLedger *ledger, const char *path);

/**
 * Number of records; 0 for a null handle.
 *
 * # Safety
 * `ledger` must be null or a live handle.
 */
size_t llof_ledger_len(const struct LlofLedger *ledger);

/**
 * Number of planted labels (0 for parsed ledgers).
 *
 * # Safety
 * `ledger` must be null or a live handle.
 */
size_t llof_ledger_label_count(const struct LlofLedger *ledger);

/**
 * # Safety
 * `ledger` must be a live handle; `out` writable.
 */
enum LlofStatus llof_ledger_label(const struct LlofLedger *ledger, size_t index, uint64_t *out);

/**
 * # Safety
 * `ledger` must be null or a handle not freed before.
 */
void llof_ledger_free(struct LlofLedger *ledger);

/**
 * Builds the user or transaction graph of a ledger.
 *
 * # Safety
 * `ledger` must be a live handle; `out` writable.
 */
enum LlofStatus llof_graph_build(const struct LlofLedger *ledger,
                                 enum LlofGraphKind kind,
                                 struct LlofGraph **out);

/**
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t llof_graph_node_count(const struct LlofGraph *graph);

/**
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t llof_graph_edge_count(const struct LlofGraph *graph);

/**
 * Writes `<kind>_nodes.tsv` and `<kind>_edges.tsv` into `dir`.
 *
 * # Safety
 * `graph` must be a live handle; `dir` a NUL-terminated string.
 */
enum LlofStatus llof_graph_write_tsv(const struct LlofGraph *graph, const char *dir);

/**
 * Reads a graph written by `llof_graph_write_tsv` or the `build` command.
 *
 * # Safety
 * `dir` must be a NUL-terminated string; `out` writable.
 */
enum LlofStatus llof_graph_read_tsv(const char *dir,
                                    enum LlofGraphKind kind,
                                    struct LlofGraph **out);

/**
 * # Safety
 * `graph` must be null or a handle not freed before.
 */
void llof_graph_free(struct LlofGraph *graph);

/**
 * Raw per-node features. Transaction graphs need the ledger; user graphs
 * accept a null ledger.
 *
 * # Safety
 * `graph` must be a live handle, `ledger` null or live, `out` writable.
 */
enum LlofStatus llof_features_extract(const struct LlofGraph *graph,
                                      const struct LlofLedger *ledger,
                                      bool extended,
                                      struct LlofFeatures **out);

/**
 * The matrix used for clustering and scoring: model columns (or all
 * columns), log-transformed and standardized.
 *
 * # Safety
 * `raw` must be a live handle; `out` writable.
 */
enum LlofStatus llof_features_model(const struct LlofFeatures *raw,
                                    bool all_columns,
                                    struct LlofFeatures **out);

/**
 * Builds a matrix from `rows * dims` row-major values; node ids are
 * `0..rows`.
 *
 * # Safety
 * `values` must point to `rows * dims` doubles; `out` writable.
 */
enum LlofStatus llof_features_from_values(const double *values,
                                          size_t rows,
                                          size_t dims,
                                          struct LlofFeatures **out);

/**
 * # Safety
 * `f` must be null or a live handle.
 */
size_t llof_features_rows(const struct LlofFeatures *f);

/**
 * # Safety
 * `f` must be null or a live handle.
 */
size_t llof_features_dims(const struct LlofFeatures *f);

/**
 * # Safety
 * `f` must be a live handle; `out` writable.
 */
enum LlofStatus llof_features_value(const struct LlofFeatures *f,
                                    size_t row,
                                    size_t col,
                                    double *out);

/**
 * # Safety
 * `f` must be a live handle; `out` writable.
 */
enum LlofStatus llof_features_node_id(const struct LlofFeatures *f, size_t row, uint64_t *out);

/**
 * # Safety
 * `f` must be null or a handle not freed before.
 */
void llof_features_free(struct LlofFeatures *f);

/**
 * Lloyd k-means with seeded random initialization.
 *
 * # Safety
 * `f` must be a live handle; `out` writable.
 */
enum LlofStatus llof_kmeans(const struct LlofFeatures *f,
                            size_t k,
                            uint64_t seed,
                            size_t max_iter,
                            struct LlofClustering **out);

/**
 * # Safety
 * `c` must be null or a live handle.
 */
size_t llof_clustering_k(const struct LlofClustering *c);

/**
 * Within-cluster sum of squares; NaN for a null handle.
 *
 * # Safety
 * `c` must be null or a live handle.
 */
double llof_clustering_wcss(const struct LlofClustering *c);

/**
 * Cluster of the `row`-th node of the clustered matrix.
 *
 * # Safety
 * `c` must be a live handle; `out` writable.
 */
enum LlofStatus llof_clustering_assignment(const struct LlofClustering *c, size_t row, size_t *out);

/**
 * # Safety
 * `c` must be null or a handle not freed before.
 */
void llof_clustering_free(struct LlofClustering *c);

/**
 * Scores every node. With a null `clustering` neighbors are exact;
 * otherwise they are searched within each node's cluster.
 *
 * # Safety
 * `f` must be a live handle, `clustering` null or live, `out` writable.
 */
enum LlofStatus llof_lof_score(const struct LlofFeatures *f,
                               size_t k_neighbors,
                               const struct LlofClustering *clustering,
                               size_t top_n,
                               struct LlofLofResult **out);

/**
 * # Safety
 * `r` must be null or a live handle.
 */
size_t llof_lof_len(const struct LlofLofResult *r);

/**
 * Node id and score at 0-based `rank_index` (0 is the strongest outlier).
 *
 * # Safety
 * `r` must be a live handle; `node_id` and `score` writable.
 */
enum LlofStatus llof_lof_get(const struct LlofLofResult *r,
                             size_t rank_index,
                             uint64_t *node_id,
                             double *score);

/**
 * Writes the ranked scores as the `lof` command does.
 *
 * # Safety
 * `r` must be a live handle; `path` a NUL-terminated string.
 */
enum LlofStatus llof_lof_write_tsv(const struct LlofLofResult *r, const char *path);

/**
 * # Safety
 * `r` must be null or a handle not freed before.
 */
void llof_lof_free(struct LlofLofResult *r);

/**
 * Dual evaluation metric `(a1 + a2) / 2`.
 */
double llof_m_de(double a1, double a2);

/**
 * Dual metric of a user ranking and a transaction ranking against a
 * ledger. Writes A1, A2 and m_DE.
 *
 * # Safety
 * `users` and `txs` must be live handles scored on the user and
 * transaction graphs of `ledger`; outputs writable.
 */
enum LlofStatus llof_dual_metric(const struct LlofLofResult *users,
                                 const struct LlofLofResult *txs,
                                 const struct LlofLedger *ledger,
                                 size_t n,
                                 size_t m,
                                 double *a1,
                                 double *a2,
                                 double *m_de);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LEDGERLOF_H */
