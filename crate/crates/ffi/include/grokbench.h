#ifndef GROKBENCH_H
#define GROKBENCH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GbStatus {
  GB_STATUS_OK = 0,
  GB_STATUS_NULL_POINTER = 1,
  GB_STATUS_INVALID_ARGUMENT = 2,
  GB_STATUS_CONFIG = 3,
  GB_STATUS_DATA = 4,
  GB_STATUS_SHAPE = 5,
  GB_STATUS_NON_FINITE = 6,
  GB_STATUS_DEGENERATE = 7,
  GB_STATUS_FORMAT = 8,
  GB_STATUS_IO = 9,
  GB_STATUS_INTERNAL = 10,
  GB_STATUS_PANIC = 11,
} GbStatus;

// Phase codes, in the order of the classifier's tie-break severity.
typedef enum GbPhase {
  GB_PHASE_CONFUSION = 0,
  GB_PHASE_FORGETTING = 1,
  GB_PHASE_MEMORIZATION = 2,
  GB_PHASE_COEXISTENCE = 3,
  GB_PHASE_PARTIAL_INVERSION = 4,
  GB_PHASE_FULL_INVERSION = 5,
} GbPhase;

// Opaque run configuration.
typedef struct GbConfig GbConfig;

// Opaque network weights.
typedef struct GbModel GbModel;

// Opaque example table (split and corrupted).
typedef struct GbTable GbTable;

typedef struct GbTrainSummary {
  double final_train_acc;
  double final_test_acc;
  double final_train_acc_corrupted;
  double max_test_acc;
  double final_mean_ipr;
  uint64_t steps_completed;
  // Step of the first non-finite value, or -1.
  int64_t diverged_at;
  enum GbPhase phase;
} GbTrainSummary;

typedef struct GbEval {
  double train_acc;
  double test_acc;
  double train_acc_clean;
  double train_acc_corrupted;
  double train_loss;
  double test_loss;
  double mean_ipr;
} GbEval;

typedef struct GbAnalyticReport {
  double accuracy;
  double max_offtarget_logit;
  double mean_target_logit;
} GbAnalyticReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to `len`). Returns the full message length in
// bytes, or 0 if there is none.
size_t gb_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *gb_version(void);

// New configuration with the reference defaults (p=97, N=500, ...).
enum GbStatus gb_config_new(struct GbConfig **out);

// Applies one `key=value` override using the config-file grammar.
enum GbStatus gb_config_set(struct GbConfig *cfg, const char *assignment);

enum GbStatus gb_config_validate(const struct GbConfig *cfg);

void gb_config_free(struct GbConfig *cfg);

// Builds the split, corrupted table described by `cfg`.
enum GbStatus gb_table_build(const struct GbConfig *cfg, struct GbTable **out);

// Sizes of the table's subsets. Any output pointer may be null.
enum GbStatus gb_table_counts(const struct GbTable *table,
                              size_t *train,
                              size_t *test,
                              size_t *corrupted);

void gb_table_free(struct GbTable *table);

// Gaussian initialization from `cfg` (its init seed and std).
enum GbStatus gb_model_init(const struct GbConfig *cfg, struct GbModel **out);

// The periodic closed-form network. `balanced != 0` selects the balanced
// frequency assignment instead of a random permutation.
enum GbStatus gb_model_analytic(size_t p,
                                size_t width,
                                uint64_t seed,
                                int32_t balanced,
                                struct GbModel **out);

enum GbStatus gb_model_load(const char *path, struct GbModel **out);

enum GbStatus gb_model_save(const struct GbModel *model, const char *path);

enum GbStatus gb_model_shape(const struct GbModel *model, size_t *p, size_t *width);

void gb_model_free(struct GbModel *model);

// Trains from `cfg` and returns the final model. The model is returned
// even when training diverged (`summary.diverged_at >= 0`).
enum GbStatus gb_train(const struct GbConfig *cfg,
                       struct GbModel **out_model,
                       struct GbTrainSummary *summary);

// Evaluates `model` on `table` in eval mode with MSE loss.
enum GbStatus gb_model_evaluate(const struct GbModel *model,
                                const struct GbTable *table,
                                struct GbEval *out);

// Writes the combined IPR (r = 2) of each neuron into `out[0..len]`; dead
// neurons get NaN. `len` must equal the width. The mean over live neurons
// goes to `mean` if it is not null.
enum GbStatus gb_model_ipr(const struct GbModel *model, double *out, size_t len, double *mean);

// Zeroes every weight attached to hidden neuron `k`.
enum GbStatus gb_model_prune(struct GbModel *model, size_t k);

// Checks a quadratic model against modular addition on all `p²` inputs.
enum GbStatus gb_verify_analytic(const struct GbModel *model, struct GbAnalyticReport *out);

// Phase of a finished run from its final and best-seen accuracies.
enum GbStatus gb_classify(double train_acc,
                          double test_acc,
                          double xi,
                          double max_hist_test_acc,
                          enum GbPhase *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GROKBENCH_H */
