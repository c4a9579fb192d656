#ifndef EXITFLOW_H
#define EXITFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum ExfStatus {
  EXF_STATUS_OK = 0,
  EXF_STATUS_NULL_POINTER = 1,
  EXF_STATUS_INVALID_UTF8 = 2,
  EXF_STATUS_CONFIG_INVALID = 3,
  EXF_STATUS_GEOMETRY = 4,
  EXF_STATUS_DYNAMICS = 5,
  EXF_STATUS_SOLVER = 6,
  EXF_STATUS_TRAJECTORY = 7,
  EXF_STATUS_TRANSPORT = 8,
  EXF_STATUS_EQUILIBRIUM = 9,
  EXF_STATUS_IO = 10,
  /**
   * `exf_run` completed but at least one verification check failed.
   */
  EXF_STATUS_CHECKS_FAILED = 11,
  EXF_STATUS_PANIC = 12,
} ExfStatus;

/**
 * Pipelines runnable through [`exf_run`].
 */
typedef enum ExfCommand {
  EXF_COMMAND_SOLVE_HJB = 0,
  EXF_COMMAND_TRAJECTORIES = 1,
  EXF_COMMAND_EQUILIBRIUM = 2,
  EXF_COMMAND_EPSILON_STUDY = 3,
  EXF_COMMAND_VERIFY = 4,
} ExfCommand;

/**
 * A validated experiment configuration.
 */
typedef struct ExfConfig ExfConfig;

/**
 * A solved value function with the field and problem it belongs to.
 */
typedef struct ExfSolution ExfSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *exf_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *exf_version(void);

/**
 * Parses and validates a TOML config.
 *
 * # Safety
 * `toml` must be a nul-terminated string and `out` a valid pointer.
 */
enum ExfStatus exf_config_parse(const char *toml, struct ExfConfig **out);

/**
 * Overrides the seed of a config; seeds above `INT64_MAX` are rejected.
 *
 * # Safety
 * `cfg` must come from [`exf_config_parse`].
 */
enum ExfStatus exf_config_set_seed(struct ExfConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must come from [`exf_config_parse`] or be null.
 */
void exf_config_free(struct ExfConfig *cfg);

/**
 * Solves the value function for the config's speed field.
 *
 * # Safety
 * `cfg` must come from [`exf_config_parse`] and `out` be a valid pointer.
 */
enum ExfStatus exf_solve(const struct ExfConfig *cfg, struct ExfSolution **out);

/**
 * # Safety
 * `sol` must come from [`exf_solve`] or be null.
 */
void exf_solution_free(struct ExfSolution *sol);

/**
 * Interpolated value `φ(t, (x, y))`; `y` is ignored in one dimension.
 *
 * # Safety
 * `sol` must come from [`exf_solve`] and `out` be a valid pointer.
 */
enum ExfStatus exf_solution_value(const struct ExfSolution *sol,
                                  double t,
                                  double x,
                                  double y,
                                  double *out);

/**
 * Grid shape: nodes along x and y (1 in one dimension) and the number of
 * time steps.
 *
 * # Safety
 * `sol` must come from [`exf_solve`]; the outputs must be valid pointers.
 */
enum ExfStatus exf_solution_shape(const struct ExfSolution *sol,
                                  size_t *nx,
                                  size_t *ny,
                                  size_t *nt);

/**
 * Optimal exit from `(x, y)` at time `t0`: exit time (from `t0`), exit
 * point and cost.
 *
 * # Safety
 * `sol` must come from [`exf_solve`]; the outputs must be valid pointers.
 */
enum ExfStatus exf_solution_optimal_exit(const struct ExfSolution *sol,
                                         double t0,
                                         double x,
                                         double y,
                                         double *tau,
                                         double *exit_x,
                                         double *exit_y,
                                         double *cost);

/**
 * Runs a pipeline writing into `out_dir`, like the command-line tool.
 * Returns [`ExfStatus::ChecksFailed`] when `verify` finds a failing check.
 *
 * # Safety
 * `cfg` must come from [`exf_config_parse`]; `out_dir` must be a
 * nul-terminated string.
 */
enum ExfStatus exf_run(const struct ExfConfig *cfg, enum ExfCommand command, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXITFLOW_H */
