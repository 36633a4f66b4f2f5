/* C interface to the simsbm library. */

#ifndef SIMSBM_H
#define SIMSBM_H

/* Generated by cbindgen from simsbm-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum SimsbmStatus {
  SIMSBM_STATUS_OK = 0,
  // A required pointer argument was null.
  SIMSBM_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  SIMSBM_STATUS_INVALID_UTF8 = 2,
  // Invalid model structure or options.
  SIMSBM_STATUS_CONFIG = 3,
  // Unreadable, malformed, or mismatched data or model files.
  SIMSBM_STATUS_DATA = 4,
  // Fitting failed to produce a usable model.
  SIMSBM_STATUS_FIT = 5,
  // Unexpected internal failure.
  SIMSBM_STATUS_INTERNAL = 6,
} SimsbmStatus;

// Opaque handle to a trained model plus its vocabulary.
typedef struct SimsbmModel SimsbmModel;

// Options for [`simsbm_train`]; pass null for the defaults
// (seed 0, 100 restarts, 1000 max iterations, patience 30, tolerance 1e-4,
// all cores).
typedef struct SimsbmFitOptions {
  uint64_t seed;
  uint32_t restarts;
  uint32_t max_iters;
  // Consecutive small-change iterations required for convergence.
  uint32_t patience;
  // Relative log-likelihood change counted as small.
  double rel_tol;
  // Worker threads; 0 means all cores.
  uint32_t jobs;
} SimsbmFitOptions;

// Ranking metrics plus log-likelihood from [`simsbm_evaluate`].
typedef struct SimsbmMetrics {
  double f1_max;
  double p_at_1;
  double auc_roc_weighted;
  double auc_pr_weighted;
  double rank_avg_precision;
  double coverage_error_normalized;
  double log_likelihood;
} SimsbmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static string.
const char *simsbm_version(void);

// Description of the most recent failure on this thread; empty string if
// none. Valid until the next failing call on the same thread.
const char *simsbm_last_error_message(void);

// Loads a model file into a new handle. On success writes the handle to
// `out`; free it with [`simsbm_model_free`].
//
// # Safety
// `path` must be a valid NUL-terminated string and `out` a valid pointer.
enum SimsbmStatus simsbm_model_load(const char *path, struct SimsbmModel **out);

// Writes the model to a file.
//
// # Safety
// `model` must come from this library; `path` must be a valid string.
enum SimsbmStatus simsbm_model_save(const struct SimsbmModel *model, const char *path);

// Releases a handle. Null is a no-op.
//
// # Safety
// `model` must be null or an owned handle from this library, freed once.
void simsbm_model_free(struct SimsbmModel *model);

// Number of distinct outputs; 0 on a null handle.
//
// # Safety
// `model` must be null or a valid handle.
size_t simsbm_model_output_count(const struct SimsbmModel *model);

// Number of context layers; 0 on a null handle.
//
// # Safety
// `model` must be null or a valid handle.
size_t simsbm_model_layer_count(const struct SimsbmModel *model);

// Token string for output `index`, borrowed from the handle; null when the
// handle is null or the index is out of range.
//
// # Safety
// `model` must be null or a valid handle.
const char *simsbm_model_output_token(const struct SimsbmModel *model, size_t index);

// Trains a model on a TSV dataset with the spec shorthand
// (`"type:multiplicity@clusters,..."`) and writes the handle to `out`.
//
// # Safety
// `data_path` and `spec` must be valid strings; `options` null or valid;
// `out` a valid pointer.
enum SimsbmStatus simsbm_train(const char *data_path,
                               const char *spec,
                               const struct SimsbmFitOptions *options,
                               struct SimsbmModel **out);

// Scores one context: `tokens` holds one entity token per layer, in layer
// order; `out_probs` receives `out_len` probabilities (one per output, in
// the model's output order, summing to 1). `out_len` must equal
// [`simsbm_model_output_count`].
//
// # Safety
// All pointers must be valid; `tokens` must hold `token_count` valid
// strings; `out_probs` must have room for `out_len` doubles.
enum SimsbmStatus simsbm_predict(const struct SimsbmModel *model,
                                 const char *const *tokens,
                                 size_t token_count,
                                 double *out_probs,
                                 size_t out_len);

// Scores a TSV dataset with the model and fills `out` with ranking metrics
// and the log-likelihood. Tokens in the file must be known to the model.
//
// # Safety
// `model` must be a valid handle, `data_path` a valid string, `out` a
// valid pointer.
enum SimsbmStatus simsbm_evaluate(const struct SimsbmModel *model,
                                  const char *data_path,
                                  struct SimsbmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SIMSBM_H */
