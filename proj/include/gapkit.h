/* gapkit — post-hoc generalization-gap prediction for small CNNs.
 *
 * C API over the gapkit core: opaque handles, integer status codes, and
 * JSON strings for structured configs/results. Every function returns
 * GK_OK on success; on failure gk_last_error() holds a thread-local
 * message describing what went wrong.
 *
 * Strings returned through char** out-parameters are heap-allocated and
 * must be released with gk_string_free().
 */

#ifndef GAPKIT_H
#define GAPKIT_H

#include <stdint.h>

#if defined(_WIN32)
#define GAPKIT_API __declspec(dllexport)
#else
#define GAPKIT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gk_status {
  GK_OK = 0,
  GK_ERR_INVALID_ARGUMENT = 1,
  GK_ERR_SHAPE = 2,
  GK_ERR_IO = 3,
  GK_ERR_FORMAT = 4,   /* malformed file or config; field named in message */
  GK_ERR_CHECKSUM = 5,
  GK_ERR_OVERFLOW = 6,
  GK_ERR_NUMERIC = 7,  /* non-finite intermediate */
  GK_ERR_DEGENERATE = 8,
  GK_ERR_UNSUPPORTED = 9,
  GK_ERR_PARTIAL = 10, /* run completed with per-model failures */
  GK_ERR_UNKNOWN = 11
} gk_status;

typedef struct gk_model gk_model;     /* a loaded CNN (weights + layout) */
typedef struct gk_dataset gk_dataset; /* images + labels */

/* Progress callback: one human-readable line per event. */
typedef void (*gk_progress_fn)(const char* line, void* user);

GAPKIT_API const char* gk_version(void);

/* Message for the most recent failure on this thread ("" if none). */
GAPKIT_API const char* gk_last_error(void);

GAPKIT_API void gk_string_free(char* s);

/* ---- models (directory with model.json + weights.bin) ---- */

GAPKIT_API gk_status gk_model_load(const char* dir, gk_model** out);
GAPKIT_API gk_status gk_model_save(const gk_model* model, const char* dir);
GAPKIT_API void gk_model_free(gk_model* model);

/* JSON summary: input shape, class count, layer list. */
GAPKIT_API gk_status gk_model_info(const gk_model* model, char** json_out);

/* ---- datasets (single-file binary format) ---- */

GAPKIT_API gk_status gk_dataset_load(const char* path, gk_dataset** out);
GAPKIT_API gk_status gk_dataset_save(const gk_dataset* data, const char* path);
GAPKIT_API void gk_dataset_free(gk_dataset* data);

/* Synthetic shape dataset; synth_json may be NULL for defaults. split is
 * 0 for train, 1 for test. */
GAPKIT_API gk_status gk_dataset_generate(const char* synth_json, int32_t num_classes,
                                         int64_t count, uint64_t seed, int32_t split,
                                         gk_dataset** out);

GAPKIT_API gk_status gk_dataset_info(const gk_dataset* data, int64_t* count,
                                     int32_t* height, int32_t* width,
                                     int32_t* channels, int32_t* num_classes);

/* ---- single-model evaluation ---- */

/* Fraction of samples whose true-class logit strictly exceeds all others. */
GAPKIT_API gk_status gk_accuracy(const gk_model* model, const gk_dataset* data,
                                 double* out);

/* Runs one complexity measure. measure_id is one of:
 *   dbi, silhouette, calinski_harabasz, label_wise_mixup, manifold_mixup,
 *   margin_summary, augment_margin_summary, mixup_margin_summary,
 *   dbi_x_label_wise_mixup, prod_of_spec_over_margin,
 *   prod_of_fro_over_margin, augment_performance
 * config_json may be NULL; budget 0 selects the default sample budget.
 * result_json receives the full measure record (value + provenance). */
GAPKIT_API gk_status gk_measure(const gk_model* model, const gk_dataset* data,
                                const char* measure_id, const char* config_json,
                                uint64_t seed, int64_t budget, char** result_json);

/* ---- pipeline over a model zoo ---- */

/* Trains the configured hyperparameter grid into out_dir (datasets, one
 * subdirectory per model, zoo.json manifest). Refuses an existing out_dir
 * unless force is nonzero. */
GAPKIT_API gk_status gk_zoo_build(const char* config_json, const char* out_dir,
                                  int parallelism, int force,
                                  gk_progress_fn progress, void* user);

/* Runs the configured measures over every model of a zoo and writes the
 * results file. Resumable: already-computed (model, measure) pairs are
 * skipped by provenance hash. Returns GK_ERR_PARTIAL when some pairs
 * failed (failures are recorded in the results file). */
GAPKIT_API gk_status gk_measure_zoo(const char* zoo_dir, const char* run_config_json,
                                    const char* out_path, gk_progress_fn progress,
                                    void* user);

/* Scores every measure in a results file against the zoo's recorded gaps
 * (Kendall tau and the conditional-MI score) and writes the scores file.
 * options_json may be NULL; recognized keys: max_conditioning_size (int),
 * exact_size_only (bool), ties ("drop"|"category"), include_flagged. */
GAPKIT_API gk_status gk_score(const char* results_path, const char* zoo_dir,
                              const char* out_path, const char* options_json);

/* Renders the fixed-width report table for a scores file. */
GAPKIT_API gk_status gk_report(const char* scores_path, char** text_out);

#ifdef __cplusplus
}
#endif

#endif /* GAPKIT_H */
