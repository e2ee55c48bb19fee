#ifndef MSC_SAMPLER_H
#define MSC_SAMPLER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MscScheduleKind {
  MSC_SCHEDULE_KIND_LINEAR = 0,
  MSC_SCHEDULE_KIND_COSINE = 1,
  MSC_SCHEDULE_KIND_POLYNOMIAL = 2,
  MSC_SCHEDULE_KIND_MULTISTEP = 3,
} MscScheduleKind;

/**
 * Result code of every fallible call.
 */
typedef enum MscStatus {
  MSC_STATUS_OK = 0,
  MSC_STATUS_NULL_POINTER = 1,
  MSC_STATUS_INVALID_ARGUMENT = 2,
  MSC_STATUS_CONFIG = 3,
  MSC_STATUS_PROFILE = 4,
  MSC_STATUS_DATA = 5,
  MSC_STATUS_VERSION = 6,
  MSC_STATUS_TRUNCATED = 7,
  MSC_STATUS_COMPARISON = 8,
  MSC_STATUS_REPORT = 9,
  MSC_STATUS_INVARIANT = 10,
  MSC_STATUS_IO = 11,
  MSC_STATUS_PANIC = 12,
} MscStatus;

/**
 * Validated run configuration (sampler and cost profile).
 */
typedef struct MscConfig MscConfig;

typedef struct MscCostReport MscCostReport;

/**
 * One epoch's per-rank iteration plan.
 */
typedef struct MscPlan MscPlan;

/**
 * Shape of one plan step.
 */
typedef struct MscStep {
  uint32_t height;
  uint32_t width;
  uint32_t batch_size;
  uint32_t num_indices;
} MscStep;

typedef struct MscCoverage {
  uint64_t duplicates;
  uint64_t padding_duplicates;
  uint64_t missing;
  uint64_t out_of_range;
  uint64_t max_pixel_budget;
  uint64_t budget_violations;
  uint64_t shape_violations;
  bool steps_equal;
  /**
   * No contract violations for the plan's configuration.
   */
  bool clean;
} MscCoverage;

typedef struct MscCostSummary {
  double total_flops;
  double updates;
  double peak_activation_units;
  uint32_t epochs;
} MscCostSummary;

typedef struct MscRelative {
  double flops_ratio;
  double updates_ratio;
  double peak_ratio;
} MscRelative;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *msc_last_error(void);

/**
 * Static name of a status code.
 */
const char *msc_status_name(enum MscStatus status);

/**
 * Parses a run config from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MscStatus msc_config_from_json(const char *json, struct MscConfig **out);

/**
 * Loads a run config file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MscStatus msc_config_load(const char *path, struct MscConfig **out);

/**
 * # Safety
 * `cfg` must be NULL or a handle from `msc_config_*` not yet freed.
 */
void msc_config_free(struct MscConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
uint32_t msc_config_epochs(const struct MscConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live config handle.
 */
uint32_t msc_config_world_size(const struct MscConfig *cfg);

/**
 * Batch size the configured sampler uses at `height x width`.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be writable.
 */
enum MscStatus msc_config_batch_for(const struct MscConfig *cfg,
                                    uint32_t height,
                                    uint32_t width,
                                    uint32_t *out);

/**
 * Builds the plan for one epoch.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be writable.
 */
enum MscStatus msc_plan_epoch(const struct MscConfig *cfg, uint32_t epoch, struct MscPlan **out);

/**
 * # Safety
 * `plan` must be NULL or a handle from `msc_plan_epoch` not yet freed.
 */
void msc_plan_free(struct MscPlan *plan);

/**
 * # Safety
 * `plan` must be a live plan handle; `out` must be writable.
 */
enum MscStatus msc_plan_num_steps(const struct MscPlan *plan, uint32_t rank, uint32_t *out);

/**
 * # Safety
 * `plan` must be a live plan handle; `out` must be writable.
 */
enum MscStatus msc_plan_step(const struct MscPlan *plan,
                             uint32_t rank,
                             uint32_t step,
                             struct MscStep *out);

/**
 * Borrows the dataset indices of one step. The array stays valid until the
 * plan is freed.
 *
 * # Safety
 * `plan` must be a live plan handle; `indices` and `len` must be writable.
 */
enum MscStatus msc_plan_indices(const struct MscPlan *plan,
                                uint32_t rank,
                                uint32_t step,
                                const uint64_t **indices,
                                size_t *len);

/**
 * Coverage check of a plan against its config.
 *
 * # Safety
 * `plan` and `cfg` must be live handles; `out` must be writable.
 */
enum MscStatus msc_plan_verify(const struct MscPlan *plan,
                               const struct MscConfig *cfg,
                               struct MscCoverage *out);

/**
 * Writes epochs `[first_epoch, end_epoch)` as a plan file.
 *
 * # Safety
 * `cfg` must be a live config handle; `path` a NUL-terminated string.
 */
enum MscStatus msc_plan_write(const struct MscConfig *cfg,
                              uint32_t first_epoch,
                              uint32_t end_epoch,
                              const char *path);

/**
 * Simulates training cost. `num_seeds == 0` selects the closed-form
 * expected mode; otherwise Monte Carlo over `seeds`.
 *
 * # Safety
 * `cfg` must be a live config handle; `seeds` must hold `num_seeds`
 * values; `out` must be writable.
 */
enum MscStatus msc_simulate(const struct MscConfig *cfg,
                            const uint64_t *seeds,
                            size_t num_seeds,
                            struct MscCostReport **out);

/**
 * # Safety
 * `report` must be NULL or a handle from `msc_simulate` not yet freed.
 */
void msc_cost_report_free(struct MscCostReport *report);

/**
 * # Safety
 * `report` must be a live report handle; `out` must be writable.
 */
enum MscStatus msc_cost_report_summary(const struct MscCostReport *report,
                                       struct MscCostSummary *out);

/**
 * Candidate-over-baseline ratios.
 *
 * # Safety
 * Both reports must be live handles; `out` must be writable.
 */
enum MscStatus msc_compare(const struct MscCostReport *candidate,
                           const struct MscCostReport *baseline,
                           struct MscRelative *out);

/**
 * `max(1, floor(B*H*W / (ht*wt)))`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MscStatus msc_batch_size_for(uint32_t batch,
                                  uint32_t channels,
                                  uint32_t height,
                                  uint32_t width,
                                  uint32_t target_height,
                                  uint32_t target_width,
                                  uint32_t *out);

/**
 * Curriculum value `rho(epoch)` with default schedule parameters.
 *
 * # Safety
 * `out` must be writable.
 */
enum MscStatus msc_schedule_value(enum MscScheduleKind kind,
                                  double rho0,
                                  double tau,
                                  uint32_t total_epochs,
                                  uint32_t epoch,
                                  double *out);

/**
 * Natural-log entropy of a probability vector.
 *
 * # Safety
 * `probs` must hold `len` values; `out` must be writable.
 */
enum MscStatus msc_entropy(const double *probs, size_t len, double *out);

/**
 * Population skewness.
 *
 * # Safety
 * `values` must hold `len` values; `out` must be writable.
 */
enum MscStatus msc_skewness(const double *values, size_t len, double *out);

/**
 * Expected calibration error from per-record confidences and correctness
 * flags (non-zero means correct).
 *
 * # Safety
 * `confidences` and `correct` must each hold `len` values; `out` must be
 * writable.
 */
enum MscStatus msc_ece(const double *confidences,
                       const uint8_t *correct,
                       size_t len,
                       uint32_t num_bins,
                       double *out);

/**
 * Library version string.
 */
const char *msc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSC_SAMPLER_H */
