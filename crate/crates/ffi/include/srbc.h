#ifndef SRBC_H
#define SRBC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum SrbcStatus {
  SRBC_STATUS_OK = 0,
  SRBC_STATUS_NULL_POINTER = 1,
  SRBC_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad parameters or configuration.
   */
  SRBC_STATUS_INVALID = 3,
  /**
   * CFL violation or non-finite values; the handle keeps its last good state.
   */
  SRBC_STATUS_NUMERICAL = 4,
  /**
   * Output buffer too small.
   */
  SRBC_STATUS_BUFFER_TOO_SMALL = 5,
  SRBC_STATUS_OTHER = 6,
} SrbcStatus;

/**
 * Opaque simulation handle.
 */
typedef struct SrbcSim SrbcSim;

/**
 * Dimensional inputs.
 */
typedef struct SrbcPhysical {
  double nu;
  double kappa;
  double g;
  double alpha;
  double gamma;
  double gamma_tilde;
  double h;
  double t1;
  double l_phys;
  uint32_t d;
} SrbcPhysical;

/**
 * Nondimensional groups.
 */
typedef struct SrbcNondim {
  double pr;
  double ra;
  double ra_tilde;
  double aspect;
} SrbcNondim;

/**
 * Energy functionals of the current state.
 */
typedef struct SrbcDiagnostics {
  double t;
  double norm_u_sq;
  double norm_theta_sq;
  double grad_u_sq;
  double grad_theta_sq;
  double theta_l4;
  double flux_term;
} SrbcDiagnostics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *srbc_version(void);

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *srbc_last_error_message(void);

/**
 * Nondimensional groups of a dimensional parameter set.
 *
 * # Safety
 * `input` and `out` must be null or valid for reads and writes respectively.
 */
enum SrbcStatus srbc_nondimensionalize(const struct SrbcPhysical *input, struct SrbcNondim *out);

/**
 * Background-profile upper bound on the Nusselt number.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum SrbcStatus srbc_background_bound(double ra, double ra_tilde, double aspect, double *out);

/**
 * Creates a simulation from `run_finite_pr` or `run_infinite_pr`
 * configuration text; the trajectory is member 0 of the configured seed.
 *
 * # Safety
 * `config` must be null or a nul-terminated string; `out` must be null or
 * valid for writes. On success `*out` owns a handle for `srbc_sim_free`.
 */
enum SrbcStatus srbc_sim_new(const char *config, struct SrbcSim **out);

/**
 * Advances the simulation by `steps` steps. On a numerical failure the
 * handle keeps the last state that stepped cleanly.
 *
 * # Safety
 * `sim` must be null or a live handle from `srbc_sim_new`.
 */
enum SrbcStatus srbc_sim_step(struct SrbcSim *sim, uint64_t steps);

/**
 * Current simulation time.
 *
 * # Safety
 * `sim` must be null or a live handle; `out` null or valid for writes.
 */
enum SrbcStatus srbc_sim_time(const struct SrbcSim *sim, double *out);

/**
 * Grid dimensions `(nx, nz)` of the simulation.
 *
 * # Safety
 * `sim` must be null or a live handle; `nx`, `nz` null or valid for writes.
 */
enum SrbcStatus srbc_sim_shape(const struct SrbcSim *sim, uintptr_t *nx, uintptr_t *nz);

/**
 * Energy functionals of the current state.
 *
 * # Safety
 * `sim` must be null or a live handle; `out` null or valid for writes.
 */
enum SrbcStatus srbc_sim_diagnostics(const struct SrbcSim *sim, struct SrbcDiagnostics *out);

/**
 * Copies the temperature fluctuation, row-major `[i * nz + k]`, into `buf`
 * of length `len >= nx * nz`.
 *
 * # Safety
 * `sim` must be null or a live handle; `buf` null or valid for `len` writes.
 */
enum SrbcStatus srbc_sim_copy_theta(const struct SrbcSim *sim, double *buf, uintptr_t len);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `sim` must be null or a live handle not used afterwards.
 */
void srbc_sim_free(struct SrbcSim *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRBC_H */
