#ifndef MOFUSION_H
#define MOFUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MofStatus {
  MOF_STATUS_OK = 0,
  MOF_STATUS_NULL_POINTER = 1,
  MOF_STATUS_INVALID_ARGUMENT = 2,
  MOF_STATUS_CONFIG = 3,
  MOF_STATUS_NUMERICAL = 4,
  MOF_STATUS_DIVERGED = 5,
  MOF_STATUS_VERSION = 6,
  MOF_STATUS_FORMAT = 7,
  MOF_STATUS_IO = 8,
  MOF_STATUS_OUT_OF_RANGE = 9,
  MOF_STATUS_PANIC = 10,
} MofStatus;

/**
 * Experiment configuration with its resolved task.
 */
typedef struct MofConfig MofConfig;

/**
 * Multi-Bernoulli density over current object states.
 */
typedef struct MofFusion MofFusion;

typedef struct MofNetwork MofNetwork;

/**
 * One simulated run: ground truth and local filter outputs.
 */
typedef struct MofRun MofRun;

typedef struct MofMetricReport {
  double total;
  double localization;
  double missed;
  double false_detection;
} MofMetricReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *mof_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mof_version(void);

/**
 * Default configuration for `scenario` (1-3) and `task` (1-2).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum MofStatus mof_config_new(uint8_t scenario, uint8_t task, struct MofConfig **out);

/**
 * Configuration read from a TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as in [`mof_config_new`].
 */
enum MofStatus mof_config_load(const char *path, struct MofConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from this library not yet freed.
 */
void mof_config_free(struct MofConfig *cfg);

/**
 * Simulate test-stream run `index` under `seed` and run the local filters.
 *
 * # Safety
 * `cfg` must be a live handle; `out` must be writable.
 */
enum MofStatus mof_run_simulate(const struct MofConfig *cfg,
                                uint64_t seed,
                                uint64_t index,
                                struct MofRun **out);

/**
 * # Safety
 * `run` must be null or a live handle.
 */
void mof_run_free(struct MofRun *run);

/**
 * Number of ground-truth objects at the final step.
 *
 * # Safety
 * `run` must be a live handle and `count` writable.
 */
enum MofStatus mof_run_truth_count(const struct MofRun *run, size_t *count);

/**
 * State `[x, y, vx, vy]` of truth object `i`.
 *
 * # Safety
 * `run` must be a live handle and `state` must point to four doubles.
 */
enum MofStatus mof_run_truth(const struct MofRun *run, size_t i, double *state);

/**
 * Load a trained network checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum MofStatus mof_network_load(const char *path, struct MofNetwork **out);

/**
 * # Safety
 * `net` must be null or a live handle.
 */
void mof_network_free(struct MofNetwork *net);

/**
 * Fuse the local densities of `run`. A null `net` selects the model-based
 * baseline; otherwise the network is used.
 *
 * # Safety
 * `cfg` and `run` must be live handles, `net` null or live, `out` writable.
 */
enum MofStatus mof_fuse(const struct MofConfig *cfg,
                        const struct MofRun *run,
                        const struct MofNetwork *net,
                        struct MofFusion **out);

/**
 * # Safety
 * `fusion` must be null or a live handle.
 */
void mof_fusion_free(struct MofFusion *fusion);

/**
 * Number of Bernoulli components.
 *
 * # Safety
 * `fusion` must be a live handle and `count` writable.
 */
enum MofStatus mof_fusion_len(const struct MofFusion *fusion, size_t *count);

/**
 * Component `i`: existence, mean `[x, y, vx, vy]` and row-major 4x4
 * covariance. `mean` and `cov` may be null when not wanted.
 *
 * # Safety
 * `fusion` must be a live handle; non-null outputs must hold 1, 4 and 16
 * doubles respectively.
 */
enum MofStatus mof_fusion_component(const struct MofFusion *fusion,
                                    size_t i,
                                    double *existence,
                                    double *mean,
                                    double *cov);

/**
 * GOSPA between the components of `fusion` with existence above
 * `threshold` and the ground truth of `run`, using the configured metric
 * parameters.
 *
 * # Safety
 * All handles must be live and `report` writable.
 */
enum MofStatus mof_gospa(const struct MofConfig *cfg,
                         const struct MofFusion *fusion,
                         const struct MofRun *run,
                         double threshold,
                         struct MofMetricReport *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOFUSION_H */
