#ifndef GRAPHPRIV_H
#define GRAPHPRIV_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum GpStatus {
  GP_STATUS_OK = 0,
  GP_STATUS_NULL_POINTER = 1,
  GP_STATUS_INVALID_ARGUMENT = 2,
  GP_STATUS_DIVERGENCE = 3,
  GP_STATUS_IO = 4,
  GP_STATUS_PARSE = 5,
  GP_STATUS_BUFFER_TOO_SMALL = 6,
  GP_STATUS_PANIC = 7,
} GpStatus;

/**
 * Opaque sampled or loaded graph.
 */
typedef struct GpGraph GpGraph;

/**
 * Opaque trained model: embeddings, learned propagation matrix and history.
 */
typedef struct GpModel GpModel;

/**
 * Two-block generator parameters. `k_u == 0` disables the utility channel.
 */
typedef struct GpGeneratorParams {
  size_t n;
  double p;
  double q;
  size_t k;
  double mu;
  uint64_t seed;
  size_t k_u;
  double mu_u;
  double homophily;
} GpGeneratorParams;

typedef struct GpLeakageReport {
  double pl;
  double pl_prime;
  double delta_pl;
  double bias;
  double threshold;
  bool amplified;
} GpLeakageReport;

typedef struct GpAttackReport {
  double accuracy;
  double f1;
  size_t n_test;
} GpAttackReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *gp_last_error_message(void);

/**
 * # Safety
 * `params` must point to a valid struct and `out` to writable storage.
 */
enum GpStatus gp_graph_generate(const struct GpGeneratorParams *params, struct GpGraph **out);

/**
 * Load `<prefix>.edges.csv`, `<prefix>.features.csv` and `<prefix>.labels.csv`.
 *
 * # Safety
 * `prefix` must be a NUL-terminated string and `out` writable.
 */
enum GpStatus gp_graph_load(const char *prefix, struct GpGraph **out);

/**
 * # Safety
 * `graph` must be a live handle and `prefix` a NUL-terminated string.
 */
enum GpStatus gp_graph_save(const struct GpGraph *graph, const char *prefix);

/**
 * # Safety
 * `graph` must come from this library and not be used afterwards. Null is a no-op.
 */
void gp_graph_free(struct GpGraph *graph);

/**
 * Node count, or 0 for a null handle.
 *
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t gp_graph_node_count(const struct GpGraph *graph);

/**
 * # Safety
 * `graph` must be null or a live handle.
 */
size_t gp_graph_edge_count(const struct GpGraph *graph);

/**
 * Structural bias of the graph with respect to its sensitive labels.
 *
 * # Safety
 * `graph` must be a live handle and `out` writable.
 */
enum GpStatus gp_graph_structural_bias(const struct GpGraph *graph, double *out);

/**
 * Closed-form leakage before and after one propagation step.
 *
 * # Safety
 * `params` must be valid and `out` writable.
 */
enum GpStatus gp_leakage_analyze(const struct GpGeneratorParams *params,
                                 struct GpLeakageReport *out);

/**
 * Train the defense. `config_json` may be null for defaults; missing
 * optional fields take their defaults.
 *
 * # Safety
 * `graph` must be live, `config_json` null or NUL-terminated, `out` writable.
 */
enum GpStatus gp_train(const struct GpGraph *graph, const char *config_json, struct GpModel **out);

/**
 * # Safety
 * `model` must come from [`gp_train`] and not be used afterwards. Null is a no-op.
 */
void gp_model_free(struct GpModel *model);

/**
 * Shape of the final embeddings.
 *
 * # Safety
 * `model` must be live; `rows` and `cols` writable.
 */
enum GpStatus gp_model_embedding_shape(const struct GpModel *model, size_t *rows, size_t *cols);

/**
 * Copy the embeddings row-major into `buf` of `len` doubles.
 *
 * # Safety
 * `model` must be live and `buf` valid for `len` writes.
 */
enum GpStatus gp_model_embeddings(const struct GpModel *model, double *buf, size_t len);

/**
 * Recorded epochs.
 *
 * # Safety
 * `model` must be null or live.
 */
size_t gp_model_epochs(const struct GpModel *model);

/**
 * Structural bias of the learned propagation matrix at the first and last epoch.
 *
 * # Safety
 * `model` must be live; `initial` and `last` writable.
 */
enum GpStatus gp_model_bias(const struct GpModel *model, double *initial, double *last);

/**
 * Sensitive-attribute attack on row-major embeddings, one row per node.
 *
 * # Safety
 * `graph` must be live, `z` valid for `rows * cols` reads, `out` writable.
 */
enum GpStatus gp_attack_node(const struct GpGraph *graph,
                             const double *z,
                             size_t rows,
                             size_t cols,
                             uint64_t seed,
                             struct GpAttackReport *out);

/**
 * Link-inference attack on row-major embeddings against the graph's edges.
 *
 * # Safety
 * As [`gp_attack_node`].
 */
enum GpStatus gp_attack_link(const struct GpGraph *graph,
                             const double *z,
                             size_t rows,
                             size_t cols,
                             uint64_t seed,
                             struct GpAttackReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAPHPRIV_H */
