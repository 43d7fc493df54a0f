#ifndef HYSTEREQ_H
#define HYSTEREQ_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum HqStatus {
  HQ_STATUS_OK = 0,
  HQ_STATUS_NULL_POINTER = 1,
  HQ_STATUS_INVALID_ARGUMENT = 2,
  HQ_STATUS_CONFIG = 3,
  HQ_STATUS_NUMERICAL = 4,
  HQ_STATUS_IO = 5,
  HQ_STATUS_PANIC = 6,
  HQ_STATUS_OTHER = 7,
} HqStatus;

/**
 * Run configuration handle.
 */
typedef struct HqConfig HqConfig;

/**
 * Discovered model handle.
 */
typedef struct HqModel HqModel;

/**
 * Result of a full run.
 */
typedef struct HqRun HqRun;

/**
 * Parameters of a Bouc-Wen oscillator, `stiffness_power` 1 or 3.
 */
typedef struct HqBoucWen {
  double m;
  double c;
  double k;
  double alpha;
  double a;
  double beta;
  double gamma;
  double n;
  uint8_t stiffness_power;
} HqBoucWen;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hq_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL, or 0
 * if the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t hq_last_error_message(char *buf, size_t len);

/**
 * Frees a string returned by this library.
 *
 * # Safety
 * `s` must be null or come from this library and not be freed already.
 */
void hq_string_free(char *s);

/**
 * Creates the preset configuration `benchmark`, `complex` or `complex_full`.
 *
 * # Safety
 * `name` must be a NUL-terminated string, `out` a writable pointer.
 */
enum HqStatus hq_config_preset(const char *name, struct HqConfig **out);

/**
 * Parses a JSON configuration; absent fields keep the preset's values.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `out` a writable pointer.
 */
enum HqStatus hq_config_from_json(const char *json, struct HqConfig **out);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum HqStatus hq_config_set_seed(struct HqConfig *cfg, uint64_t seed);

/**
 * Sets the measurement SNR in dB; a non-finite value means noise-free.
 *
 * # Safety
 * `cfg` must be a live handle.
 */
enum HqStatus hq_config_set_noise(struct HqConfig *cfg, double snr_db);

/**
 * Serializes a configuration; free the string with [`hq_string_free`].
 *
 * # Safety
 * `cfg` must be a live handle, `out` a writable pointer.
 */
enum HqStatus hq_config_to_json(const struct HqConfig *cfg, char **out);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void hq_config_free(struct HqConfig *cfg);

/**
 * Simulates a Bouc-Wen oscillator on the uniform grid `t` with forcing `u`,
 * writing `n` samples each of x, ẋ and z.
 *
 * # Safety
 * All arrays must hold `n` elements; outputs must be writable.
 */
enum HqStatus hq_simulate(const struct HqBoucWen *params,
                          const double *t,
                          const double *u,
                          size_t n,
                          double x0,
                          double xdot0,
                          double z0,
                          double *x_out,
                          double *xdot_out,
                          double *z_out);

/**
 * Loads a model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string, `out` a writable pointer.
 */
enum HqStatus hq_model_load(const char *path, struct HqModel **out);

/**
 * Parses a model from its JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string, `out` a writable pointer.
 */
enum HqStatus hq_model_from_json(const char *json, struct HqModel **out);

/**
 * Serializes a model; free the string with [`hq_string_free`].
 *
 * # Safety
 * `model` must be a live handle, `out` a writable pointer.
 */
enum HqStatus hq_model_to_json(const struct HqModel *model, char **out);

/**
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum HqStatus hq_model_save(const struct HqModel *model, const char *path);

/**
 * Re-simulates a model on the grid `t` with forcing `u`.
 *
 * # Safety
 * All arrays must hold `n` elements; outputs must be writable.
 */
enum HqStatus hq_model_predict(const struct HqModel *model,
                               const double *t,
                               const double *u,
                               size_t n,
                               double x0,
                               double xdot0,
                               double z0,
                               double *x_out,
                               double *xdot_out,
                               double *z_out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void hq_model_free(struct HqModel *model);

/**
 * Runs generation, learning, discovery, the baseline and evaluation.
 *
 * # Safety
 * `cfg` must be a live handle, `out` a writable pointer.
 */
enum HqStatus hq_run(const struct HqConfig *cfg, struct HqRun **out);

/**
 * Copies the discovered model out of a run.
 *
 * # Safety
 * `run` must be a live handle, `out` a writable pointer.
 */
enum HqStatus hq_run_model(const struct HqRun *run, struct HqModel **out);

/**
 * Writes the run's report files into `dir`.
 *
 * # Safety
 * `run` must be a live handle and `dir` a NUL-terminated string.
 */
enum HqStatus hq_run_write(const struct HqRun *run, const char *dir);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void hq_run_free(struct HqRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYSTEREQ_H */
