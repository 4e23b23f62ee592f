#ifndef MFGLAB_H
#define MFGLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MfgStatus {
  MFG_STATUS_OK = 0,
  MFG_STATUS_INVALID_ARGUMENT = 1,
  MFG_STATUS_CONFIG = 2,
  MFG_STATUS_NON_CONVERGENCE = 3,
  MFG_STATUS_IO = 4,
  MFG_STATUS_NUMERICAL = 5,
  MFG_STATUS_PANIC = 6,
} MfgStatus;

/**
 * Which path of a finite-horizon solution to read.
 */
typedef enum MfgPath {
  MFG_PATH_VALUE = 0,
  MFG_PATH_DENSITY = 1,
} MfgPath;

typedef struct MfgErgodicHandle MfgErgodicHandle;

typedef struct MfgFiniteHandle MfgFiniteHandle;

/**
 * A problem together with the solver settings used on it.
 */
typedef struct MfgProblemHandle MfgProblemHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library; static storage.
 */
const char *mfg_version(void);

/**
 * Message of the last failure on this thread, or null.
 */
const char *mfg_last_error(void);

/**
 * Builds a problem from `{"problem": {...}, "solver": {...}}`, the same
 * fields as an experiment plan.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MfgStatus mfg_problem_from_json(const char *json, struct MfgProblemHandle **out);

/**
 * # Safety
 * `h` must come from [`mfg_problem_from_json`] and not be freed twice; null is ignored.
 */
void mfg_problem_free(struct MfgProblemHandle *h);

/**
 * Number of grid nodes, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live problem handle.
 */
size_t mfg_problem_grid_len(const struct MfgProblemHandle *h);

/**
 * # Safety
 * `h` must be a live problem handle; `out` must be writable.
 */
enum MfgStatus mfg_solve_ergodic(const struct MfgProblemHandle *h, struct MfgErgodicHandle **out);

/**
 * Ergodic constant, or NaN for a null handle.
 *
 * # Safety
 * `h` must be null or a live ergodic handle.
 */
double mfg_ergodic_lambda(const struct MfgErgodicHandle *h);

/**
 * Copies `u_bar` (or `m_bar` when `density` is nonzero) into `buf`, which must hold exactly the grid length.
 *
 * # Safety
 * `h` must be a live ergodic handle and `buf` valid for `len` writes.
 */
enum MfgStatus mfg_ergodic_copy(const struct MfgErgodicHandle *h,
                                int density,
                                double *buf,
                                size_t len);

/**
 * # Safety
 * `h` must come from [`mfg_solve_ergodic`] and not be freed twice; null is ignored.
 */
void mfg_ergodic_free(struct MfgErgodicHandle *h);

/**
 * # Safety
 * `h` must be a live problem handle; `out` must be writable.
 */
enum MfgStatus mfg_solve_finite(const struct MfgProblemHandle *h,
                                double horizon,
                                struct MfgFiniteHandle **out);

/**
 * Number of time frames (steps + 1), or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live finite-horizon handle.
 */
size_t mfg_finite_frames(const struct MfgFiniteHandle *h);

/**
 * Picard iterations used, or 0 for a null handle.
 *
 * # Safety
 * `h` must be null or a live finite-horizon handle.
 */
size_t mfg_finite_iterations(const struct MfgFiniteHandle *h);

/**
 * Final fixed-point residual, or NaN for a null handle.
 *
 * # Safety
 * `h` must be null or a live finite-horizon handle.
 */
double mfg_finite_residual(const struct MfgFiniteHandle *h);

/**
 * Copies one frame of `u` or `m` into `buf`.
 *
 * # Safety
 * `h` must be a live finite-horizon handle and `buf` valid for `len` writes.
 */
enum MfgStatus mfg_finite_copy_frame(const struct MfgFiniteHandle *h,
                                     enum MfgPath path,
                                     size_t frame,
                                     double *buf,
                                     size_t len);

/**
 * # Safety
 * `h` must come from [`mfg_solve_finite`] and not be freed twice; null is ignored.
 */
void mfg_finite_free(struct MfgFiniteHandle *h);

/**
 * Parses the plan at `config_path` and runs it into `out_dir`, writing CSV
 * series. `exit_code`, when not null, receives the command-line exit status.
 *
 * # Safety
 * Both paths must be NUL-terminated strings; `exit_code` null or writable.
 */
enum MfgStatus mfg_run_plan(const char *config_path, const char *out_dir, int *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MFGLAB_H */
