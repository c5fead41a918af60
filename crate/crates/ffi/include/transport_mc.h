#ifndef TRANSPORT_MC_H
#define TRANSPORT_MC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TmcStatus {
  TMC_STATUS_OK = 0,
  TMC_STATUS_NULL_POINTER = 1,
  TMC_STATUS_INVALID_UTF8 = 2,
  /**
   * Invalid configuration, parameter or expression.
   */
  TMC_STATUS_CONFIG = 3,
  /**
   * The problem is outside what the estimator supports.
   */
  TMC_STATUS_UNSUPPORTED = 4,
  /**
   * Overflow or a non-finite value from the problem functions.
   */
  TMC_STATUS_NUMERIC = 5,
  TMC_STATUS_RUN = 6,
  TMC_STATUS_IO = 7,
  TMC_STATUS_PANIC = 8,
  /**
   * The requested value does not exist for this problem.
   */
  TMC_STATUS_UNAVAILABLE = 9,
} TmcStatus;

/**
 * Opaque solver handle: a validated configuration plus overrides.
 */
typedef struct TmcSolver TmcSolver;

/**
 * Summary of one Monte Carlo run.
 */
typedef struct TmcEstimate {
  double mean;
  double std_error;
  double ci_low;
  double ci_high;
  double confidence_level;
  uint64_t n_samples;
  uint64_t n_effective;
  uint64_t poisoned;
  /**
   * Nonzero when one sample dominates the second moment or samples were poisoned.
   */
  int32_t exploding_variance;
} TmcEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a solver from a TOML configuration document.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum TmcStatus tmc_solver_from_toml(const char *toml, struct TmcSolver **out);

/**
 * Builds a solver from a TOML configuration file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum TmcStatus tmc_solver_from_file(const char *path, struct TmcSolver **out);

/**
 * Builds a solver for a built-in problem with default settings.
 *
 * # Safety
 * `name` must be a nul-terminated string and `out` a valid pointer.
 */
enum TmcStatus tmc_solver_builtin(const char *name, struct TmcSolver **out);

/**
 * Releases a solver. Null is ignored.
 *
 * # Safety
 * `solver` must come from one of the constructors and not be used afterwards.
 */
void tmc_solver_free(struct TmcSolver *solver);

/**
 * Moves the evaluation point.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum TmcStatus tmc_solver_set_point(struct TmcSolver *solver, double t, double x);

/**
 * Selects the estimator by its configuration name, e.g. `"perturbed"`.
 *
 * # Safety
 * `solver` must be a live handle and `kind` a nul-terminated string.
 */
enum TmcStatus tmc_solver_set_estimator(struct TmcSolver *solver, const char *kind);

/**
 * # Safety
 * `solver` must be a live handle.
 */
enum TmcStatus tmc_solver_set_samples(struct TmcSolver *solver, uint64_t n_samples);

/**
 * # Safety
 * `solver` must be a live handle.
 */
enum TmcStatus tmc_solver_set_seed(struct TmcSolver *solver, uint64_t seed);

/**
 * Worker threads; 0 restores the default.
 *
 * # Safety
 * `solver` must be a live handle.
 */
enum TmcStatus tmc_solver_set_threads(struct TmcSolver *solver, uint32_t threads);

/**
 * Runs the selected estimator. Results depend only on the configuration and seed.
 *
 * # Safety
 * `solver` must be a live handle and `out` a valid pointer.
 */
enum TmcStatus tmc_solver_run(const struct TmcSolver *solver, struct TmcEstimate *out);

/**
 * Exact solution at the current point, or `Unavailable` when none is known.
 *
 * # Safety
 * `solver` must be a live handle and `out` a valid pointer.
 */
enum TmcStatus tmc_solver_exact_value(const struct TmcSolver *solver, double *out);

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *tmc_last_error(void);

/**
 * Library version as a static string.
 */
const char *tmc_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRANSPORT_MC_H */
