/* C interface to nclab: opaque handles and status codes. Functions that fail
 * return a nonzero status and record a message readable through
 * nclab_last_error() on the calling thread. Output paths of "-" mean stdout. */
#ifndef NCLAB_NCLAB_H
#define NCLAB_NCLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(NCLAB_BUILDING_LIBRARY)
#define NCLAB_API __attribute__((visibility("default")))
#else
#define NCLAB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nclab_status {
  NCLAB_OK = 0,
  NCLAB_ERR_ARGUMENT = 1, /* null handle or invalid argument value */
  NCLAB_ERR_DIMENSION = 2,
  NCLAB_ERR_INDEX = 3,
  NCLAB_ERR_CONTRACT = 4,
  NCLAB_ERR_CONFIG = 5,
  NCLAB_ERR_FORMAT = 6,
  NCLAB_ERR_DATA = 7,
  NCLAB_ERR_NUMERIC = 8,
  NCLAB_ERR_DEGENERATE = 9,
  NCLAB_ERR_IO = 10,
  NCLAB_ERR_INTERNAL = 11
} nclab_status;

typedef struct nclab_config nclab_config;
typedef struct nclab_network nclab_network;
typedef struct nclab_dataset nclab_dataset;

NCLAB_API const char* nclab_version(void);
NCLAB_API const char* nclab_status_name(nclab_status status);
/* Message of the last failure on this thread; empty after a success. */
NCLAB_API const char* nclab_last_error(void);

/* ---- configuration ---- */
NCLAB_API nclab_status nclab_config_default(nclab_config** out);
NCLAB_API nclab_status nclab_config_load(const char* path, nclab_config** out);
NCLAB_API nclab_status nclab_config_parse(const char* text, nclab_config** out);
/* Sets one dotted key; the whole config is validated by nclab_config_validate. */
NCLAB_API nclab_status nclab_config_set(nclab_config* cfg, const char* key, const char* value);
NCLAB_API nclab_status nclab_config_validate(const nclab_config* cfg);
/* Canonical text into buf (NUL-terminated, truncated to size); *needed gets
 * the full length including the terminator. buf may be null when size is 0. */
NCLAB_API nclab_status nclab_config_text(const nclab_config* cfg, char* buf, size_t size, size_t* needed);
NCLAB_API nclab_status nclab_config_hash(const nclab_config* cfg, uint64_t* out);
NCLAB_API void nclab_config_free(nclab_config* cfg);

/* ---- full experiment ---- */
/* Trains and writes the run directory named by output.dir. When verbose is
 * nonzero, progress lines go to stderr. */
NCLAB_API nclab_status nclab_run_experiment(const nclab_config* cfg, int verbose);

/* ---- datasets ---- */
/* split: 0 = train, 1 = test (fails when the config has no test split). */
NCLAB_API nclab_status nclab_dataset_from_config(const nclab_config* cfg, int split, nclab_dataset** out);
NCLAB_API nclab_status nclab_dataset_load_idx(const char* images, const char* labels, int num_classes,
                                              nclab_dataset** out);
NCLAB_API nclab_status nclab_dataset_size(const nclab_dataset* ds, size_t* samples, size_t* sample_dim,
                                          int* num_classes);
NCLAB_API void nclab_dataset_free(nclab_dataset* ds);

/* ---- networks ---- */
NCLAB_API nclab_status nclab_network_load(const char* checkpoint, nclab_network** out);
NCLAB_API nclab_status nclab_network_accuracy(const nclab_network* net, const nclab_dataset* ds, double* out);
/* Fails with NCLAB_ERR_FORMAT when net's architecture differs from the model
 * the config would build for ds. */
NCLAB_API nclab_status nclab_network_check(const nclab_network* net, const nclab_config* cfg,
                                           const nclab_dataset* ds);
NCLAB_API void nclab_network_free(nclab_network* net);

/* ---- reports ---- */
/* Perturbs ds with the config's eval.attack.* settings and writes the result
 * as float64 IDX images plus the original labels. loss_mode (ce_untargeted,
 * ce_targeted or kl) replaces the configured one when not null; targeted
 * attacks aim at (y + 1) mod C. success may be null. */
NCLAB_API nclab_status nclab_attack(const nclab_network* net, const nclab_dataset* ds, const nclab_config* cfg,
                                    const char* loss_mode, const char* images_out, const char* labels_out,
                                    double* success);
/* Penultimate NC report of eval against reference (reference may be null,
 * meaning eval itself). Writes a provenance line, header and one row. */
NCLAB_API nclab_status nclab_nc_report(const nclab_network* net, const nclab_dataset* reference,
                                       const nclab_dataset* eval, const nclab_config* cfg, const char* out);
/* Same report from FeatureSet files; reference_path may be null. net may be
 * null; when given, its final layer supplies nc3, nc4 and predictions. */
NCLAB_API nclab_status nclab_nc_report_features(const char* eval_path, const char* reference_path, int num_classes,
                                                const nclab_network* net, const nclab_config* cfg, const char* out);
/* Penultimate representations of ds; binary != 0 selects the binary format. */
NCLAB_API nclab_status nclab_export_features(const nclab_network* net, const nclab_dataset* ds, const char* path,
                                             int binary);
/* test may be null. max_dim bounds the pooled dimension per tap (0 = 512). */
NCLAB_API nclab_status nclab_layerwise(const nclab_network* net, const nclab_dataset* train,
                                       const nclab_dataset* test, const nclab_config* cfg, size_t max_dim,
                                       const char* out);
/* loss_mode as for nclab_attack. */
NCLAB_API nclab_status nclab_cluster_leap(const nclab_network* net, const nclab_dataset* ds,
                                          const nclab_config* cfg, const char* loss_mode, const char* out);

#ifdef __cplusplus
}
#endif

#endif /* NCLAB_NCLAB_H */
