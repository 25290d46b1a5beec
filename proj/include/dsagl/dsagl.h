/* SPDX-License-Identifier: Apache-2.0 */
#ifndef DSAGL_DSAGL_H
#define DSAGL_DSAGL_H

#include <stddef.h>
#include <stdint.h>

#if defined(DSAGL_BUILDING)
#define DSAGL_API __attribute__((visibility("default")))
#else
#define DSAGL_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
enum {
  DSAGL_OK = 0,
  DSAGL_E_USAGE = 1,   /* bad argument, config or shape */
  DSAGL_E_DATA = 2,    /* unreadable or malformed file, unknown bag */
  DSAGL_E_NUMERIC = 3  /* NaN/Inf during training or evaluation */
};

typedef struct dsagl_dataset dsagl_dataset;
typedef struct dsagl_model dsagl_model;

/* Message of the last failed call on this thread; "" after success. */
DSAGL_API const char* dsagl_last_error(void);
DSAGL_API const char* dsagl_version(void);
/* Frees strings returned through char** out parameters. */
DSAGL_API void dsagl_string_free(char* s);

typedef struct {
  uint64_t num_bags;
  uint64_t bag_size;
  double positive_ratio;
  uint64_t negative_class_count;
  uint64_t patch_side;
  uint64_t channels;
  double noise_sigma;
  uint64_t blob_radius;
  double blob_amplitude;
  double amplitude_spread;
  uint64_t seed;
} dsagl_synthetic_config;

DSAGL_API void dsagl_synthetic_defaults(dsagl_synthetic_config* cfg);
DSAGL_API int dsagl_dataset_generate(const dsagl_synthetic_config* cfg, dsagl_dataset** out);
DSAGL_API int dsagl_dataset_load(const char* path, dsagl_dataset** out);
DSAGL_API int dsagl_dataset_save(const dsagl_dataset* ds, const char* path);
/* "key: value" lines: counts, requested and realised ratio, seed. */
DSAGL_API int dsagl_dataset_summary(const dsagl_dataset* ds, char** out);
DSAGL_API int dsagl_dataset_bag_count(const dsagl_dataset* ds, uint64_t* out);
/* Bag size and label of the bag with this id. */
DSAGL_API int dsagl_dataset_bag_info(const dsagl_dataset* ds, uint64_t bag_id, uint64_t* size, int* label);
DSAGL_API void dsagl_dataset_free(dsagl_dataset* ds);

/* Parses and validates config text; *resolved receives every key with its
 * value (may be NULL). */
DSAGL_API int dsagl_config_resolve(const char* text, char** resolved);

/* Trains from config text. eval, out_dir, out_model and log_csv may be NULL.
 * With out_dir the run directory receives config.txt (resolved echo),
 * checkpoints, model.dsck, train_log.csv and metrics.txt. */
DSAGL_API int dsagl_train(const char* config_text, const dsagl_dataset* train, const dsagl_dataset* eval,
                          const char* out_dir, dsagl_model** out_model, char** log_csv);

DSAGL_API int dsagl_model_load(const char* path, dsagl_model** out);
DSAGL_API int dsagl_model_save(const dsagl_model* model, const char* path);
/* Resolved config the model was built and trained with. */
DSAGL_API int dsagl_model_config(const dsagl_model* model, char** out);
DSAGL_API void dsagl_model_free(dsagl_model* model);

typedef struct {
  double instance_auc;
  double bag_auc;
  uint64_t bags;
  uint64_t instances;
} dsagl_metrics;

DSAGL_API int dsagl_evaluate(const dsagl_model* model, const dsagl_dataset* ds, dsagl_metrics* out);
/* csv != 0 gives header plus one row, otherwise an aligned table. */
DSAGL_API int dsagl_metrics_format(const dsagl_metrics* m, int csv, char** out);

/* Teacher attention of one bag. Writes min(cap, N) weights, *n gets N. */
DSAGL_API int dsagl_bag_attention(const dsagl_model* model, const dsagl_dataset* ds, uint64_t bag_id, double* weights,
                                  size_t cap, size_t* n);
/* attention.txt plus bag_<id>.pgm per id, into dir. */
DSAGL_API int dsagl_export_attention(const dsagl_model* model, const dsagl_dataset* ds, const uint64_t* bag_ids,
                                     size_t count, const char* dir);

typedef struct {
  uint64_t num_bags;
  uint64_t bag_size;
  double positive_ratio;
  double blob_amplitude;
  double amplitude_spread;
  uint64_t eval_bags;
} dsagl_ablation_options;

/* Benchmark defaults of the ablation harness. */
DSAGL_API void dsagl_ablation_defaults(dsagl_ablation_options* opt);
/* suite is "architecture" or "loss". overrides is config text applied on
 * top of the benchmark's base config (may be NULL). table and csv may be
 * NULL. */
DSAGL_API int dsagl_ablate(const char* suite, const dsagl_ablation_options* opt, const char* overrides,
                           const uint64_t* seeds, size_t seed_count, char** table, char** csv);

#ifdef __cplusplus
}
#endif

#endif
