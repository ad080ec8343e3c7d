#ifndef TOUCHSTREAM_H
#define TOUCHSTREAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TsStatus {
  TS_STATUS_OK = 0,
  TS_STATUS_NULL_POINTER = 1,
  TS_STATUS_INVALID_ARGUMENT = 2,
  TS_STATUS_CONFIG = 3,
  TS_STATUS_INPUT = 4,
  TS_STATUS_TRAINING = 5,
  TS_STATUS_ENVIRONMENT = 6,
  TS_STATUS_IO = 7,
  TS_STATUS_SERIALIZATION = 8,
  TS_STATUS_PANIC = 9,
} TsStatus;

/**
 * A TouchStream task stream over its own instance pool.
 */
typedef struct TsEnv TsEnv;

/**
 * Encoder, instance pool and experiment config shared by runs.
 */
typedef struct TsLab TsLab;

/**
 * Outcome of one switch run.
 */
typedef struct TsSwitchResult {
  double rgain;
  double tgain;
  double base_reuse;
  double base_final;
} TsSwitchResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len - 1` bytes. Returns the full
 * message length without the terminator; 0 when there is none.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t ts_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ts_version(void);

/**
 * Opens a task stream on a square screen of `side` pixels. `variant` is
 * the numeric task variant and `classes` the class ids it draws from.
 *
 * # Safety
 * `classes` must point to `n_classes` values; `out` must be writable.
 */
enum TsStatus ts_env_new(uint32_t side,
                         uint8_t variant,
                         const size_t *classes,
                         size_t n_classes,
                         uint64_t seed,
                         struct TsEnv **out);

/**
 * # Safety
 * `env` must come from [`ts_env_new`] and not be used afterwards.
 */
void ts_env_free(struct TsEnv *env);

/**
 * Writes the screen size and copies the current RGB frame (row-major,
 * `width * height * 3` bytes) into `pixels` when it is non-null.
 *
 * # Safety
 * `pixels` must be null or hold `len` writable bytes.
 */
enum TsStatus ts_env_frame(const struct TsEnv *env,
                           uint32_t *width,
                           uint32_t *height,
                           uint8_t *pixels,
                           size_t len);

/**
 * Touches pixel (`x`, `y`) and writes the reward.
 *
 * # Safety
 * `env` and `reward` must be valid.
 */
enum TsStatus ts_env_step(struct TsEnv *env, uint32_t x, uint32_t y, double *reward);

/**
 * Intersection over union of two boxes given as `[x0, y0, x1, y1]`.
 *
 * # Safety
 * `a` and `b` must point to four values each; `out` must be writable.
 */
enum TsStatus ts_iou(const double *a, const double *b, double *out);

/**
 * Trapezoid area under the curve through (`steps[i]`, `values[i]`).
 *
 * # Safety
 * `steps` and `values` must point to `n` values each.
 */
enum TsStatus ts_auc(const uint64_t *steps, const double *values, size_t n, double *out);

/**
 * Builds a lab from a JSON experiment config, or the built-in desk config
 * when `config_json` is null. Trains the encoder unless the config names
 * a checkpoint.
 *
 * # Safety
 * `config_json` must be null or a NUL-terminated string; `out` writable.
 */
enum TsStatus ts_lab_new(const char *config_json, struct TsLab **out);

/**
 * # Safety
 * `lab` must come from [`ts_lab_new`] and not be used afterwards.
 */
void ts_lab_free(struct TsLab *lab);

/**
 * Trains architecture `arch` (its string id) on the config's task number
 * `task`; `steps` of 0 keeps the configured budget. Writes the AUC and
 * final smoothed reward.
 *
 * # Safety
 * Pointers must be valid; `arch` NUL-terminated.
 */
enum TsStatus ts_lab_run_task(struct TsLab *lab,
                              const char *arch,
                              size_t task,
                              uint64_t seed,
                              uint64_t steps,
                              double *auc_out,
                              double *final_out);

/**
 * Runs switch `id` (0 re-cues the same task) with layer (`unit_voting`
 * false) or unit voting; `steps` of 0 keeps the configured budget.
 *
 * # Safety
 * `lab` and `out` must be valid.
 */
enum TsStatus ts_lab_run_switch(struct TsLab *lab,
                                uint8_t id,
                                bool unit_voting,
                                bool transforms,
                                uint64_t seed,
                                uint64_t steps,
                                struct TsSwitchResult *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOUCHSTREAM_H */
