/* C API for the KD localization toolkit.
 *
 * All functions return a kdl_status; on failure the thread-local message
 * from kdl_last_error() describes what went wrong. Status values mirror the
 * CLI exit codes: 0 success, 2 validation error, 3 numeric failure.
 */
#ifndef KDL_H
#define KDL_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  KDL_OK = 0,
  KDL_ERR_VALIDATION = 2,
  KDL_ERR_NUMERIC = 3
} kdl_status;

/* Message for the most recent failure on this thread; empty string if none. */
const char* kdl_last_error(void);

/* Generate the synthetic dataset described by config_json (a run config with
 * a dataset.synthetic block) and export it to out_dir. seed_override < 0
 * keeps the config's seed. */
kdl_status kdl_gen_data(const char* config_json, int64_t seed_override,
                        const char* out_dir);

/* Train the teacher (plain cross-entropy). Writes checkpoint.kdl1,
 * run_record.json and timing.json under out_dir. */
kdl_status kdl_train_teacher(const char* config_json, int64_t seed_override,
                             const char* out_dir);

/* Train the student against a teacher checkpoint with the KD total loss. */
kdl_status kdl_train_student(const char* config_json, int64_t seed_override,
                             const char* teacher_checkpoint,
                             const char* out_dir);

/* Grad-CAM localization over annotated test positives. min_area < 0 requests
 * calibration from the train-split ground-truth areas. Writes one .hmap per
 * image plus boxes.json and metrics.json. */
kdl_status kdl_localize(const char* checkpoint, const char* dataset_dir,
                        double tau, double min_area, const char* out_dir);

/* Classification metrics over the test split; writes metrics.json. */
kdl_status kdl_evaluate(const char* checkpoint, const char* dataset_dir,
                        double threshold, const char* out_dir);

/* Hyperparameter sweep. axis is "temperature", "alpha" or "seed";
 * values_csv a comma-separated list. Writes sweep.csv, summary.json and
 * per-run directories. */
kdl_status kdl_sweep(const char* config_json, int64_t seed_override,
                     const char* axis, const char* values_csv, double tau,
                     double min_area, const char* out_dir);

/* Hessian spectrum of the chosen loss ("ce" or "kd") at the checkpoint over
 * the training split. teacher_checkpoint may be NULL for "ce".
 * params_json may be NULL or a JSON object with any of: top_k,
 * lanczos_steps, trace_probes, trace_rel_tol, esd_probes, esd_grid,
 * esd_sigma_frac, hessian_batch. Writes report.json, esd.csv and, for small
 * nets, dense_check.json. */
kdl_status kdl_hessian_report(const char* checkpoint, const char* dataset_dir,
                              const char* loss, const char* teacher_checkpoint,
                              const char* params_json, int64_t seed,
                              const char* out_dir);

/* Opaque model handle over the checkpoint file format. */
typedef struct kdl_model kdl_model;

kdl_status kdl_model_open(const char* checkpoint, kdl_model** out);
void kdl_model_close(kdl_model* model);
int64_t kdl_model_param_count(const kdl_model* model);
/* Probability of the positive (TB) class for a single grayscale image,
 * row-major values, dimensions matching the model input. */
kdl_status kdl_model_score(kdl_model* model, const double* pixels,
                           int64_t height, int64_t width, double* score_out);

#ifdef __cplusplus
}
#endif

#endif /* KDL_H */
