#ifndef IHDG_H
#define IHDG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum IhdgStatus {
  IHDG_STATUS_OK = 0,
  IHDG_STATUS_NULL_POINTER = 1,
  IHDG_STATUS_INVALID_UTF8 = 2,
  // Bad key, value or combination of settings.
  IHDG_STATUS_INVALID_CONFIG = 3,
  // Mesh, order, model or size outside what the solver supports.
  IHDG_STATUS_INVALID_INPUT = 4,
  // Singular local or global system.
  IHDG_STATUS_NUMERICAL = 5,
  IHDG_STATUS_IO = 6,
  // The requested value does not exist for this run.
  IHDG_STATUS_UNAVAILABLE = 7,
  IHDG_STATUS_BUFFER_TOO_SMALL = 8,
  // A Rust panic was caught at the boundary.
  IHDG_STATUS_INTERNAL = 9,
} IhdgStatus;

// Run outcome.
typedef enum IhdgOutcome {
  IHDG_OUTCOME_CONVERGED = 0,
  IHDG_OUTCOME_DIVERGED = 1,
  IHDG_OUTCOME_MAX_ITERATIONS = 2,
} IhdgOutcome;

// Experiment configuration.
typedef struct IhdgConfig IhdgConfig;

// Finished run.
typedef struct IhdgRun IhdgRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ihdg_version(void);

// Message of the last failed call on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *ihdg_last_error(void);

// Clears the last-error message of this thread.
void ihdg_clear_error(void);

// Creates a configuration with the defaults of the named experiment
// (`transport2d-discont`, `transport3d-smooth`, `shallow-standing-wave`,
// `convdiff3d`, `elliptic3d`, `contaminant`).
//
// # Safety
// `experiment` must be a NUL-terminated string; `out` must be writable.
enum IhdgStatus ihdg_config_new(const char *experiment, struct IhdgConfig **out_config);

// Parses a configuration file body (`key = value` lines).
//
// # Safety
// `source` must be a NUL-terminated string; `out` must be writable.
enum IhdgStatus ihdg_config_parse(const char *source, struct IhdgConfig **out_config);

// Sets one key, with the same syntax as the configuration file.
//
// # Safety
// `config` must come from `ihdg_config_new` or `ihdg_config_parse`; `key`
// and `value` must be NUL-terminated strings.
enum IhdgStatus ihdg_config_set(struct IhdgConfig *config, const char *key, const char *value);

// Number of elements of the configured mesh.
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum IhdgStatus ihdg_config_elements(const struct IhdgConfig *config, uintptr_t *out_count);

// Releases a configuration. NULL is ignored.
//
// # Safety
// `config` must be NULL or a live handle, not used afterwards.
void ihdg_config_free(struct IhdgConfig *config);

// Theory verdict: writes 1 for convergent, 0 for non-convergent.
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum IhdgStatus ihdg_predict(const struct IhdgConfig *config, int *out_convergent);

// Runs the experiment without writing files. A run that diverges still
// returns `Ok`; query its outcome.
//
// # Safety
// `config` must be a live handle; `out_run` must be writable.
enum IhdgStatus ihdg_run(const struct IhdgConfig *config, struct IhdgRun **out_run);

// Releases a run. NULL is ignored.
//
// # Safety
// `run` must be NULL or a live handle, not used afterwards.
void ihdg_run_free(struct IhdgRun *run);

// # Safety
// `run` must be a live handle; `out` must be writable.
enum IhdgStatus ihdg_run_outcome(const struct IhdgRun *run, enum IhdgOutcome *out_outcome);

// Iterations of a steady run, or the mean per time step.
//
// # Safety
// `run` must be a live handle; `out` must be writable.
enum IhdgStatus ihdg_run_iterations(const struct IhdgRun *run, double *out_iterations);

// Final L2 error of the primary unknown. `Unavailable` when the experiment
// has no exact solution or the run did not converge.
//
// # Safety
// `run` must be a live handle; `out` must be writable.
enum IhdgStatus ihdg_run_l2_error(const struct IhdgRun *run, double *out_error);

// Copies the residual history into `buffer`. `out_len` always receives the
// full length; with a NULL or short buffer the call returns
// `BufferTooSmall` and copies nothing.
//
// # Safety
// `run` must be a live handle; `buffer` must hold `capacity` doubles or be
// NULL; `out_len` must be writable.
enum IhdgStatus ihdg_run_residuals(const struct IhdgRun *run,
                                   double *buffer,
                                   uintptr_t capacity,
                                   uintptr_t *out_len);

// Solves the same problem directly and reports the largest nodal difference
// from the iterative solution.
//
// # Safety
// `config` must be a live handle; `out` must be writable.
enum IhdgStatus ihdg_oracle_difference(const struct IhdgConfig *config, double *out_difference);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IHDG_H */
