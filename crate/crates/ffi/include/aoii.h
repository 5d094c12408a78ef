#ifndef AOII_H
#define AOII_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AoiiStatus {
  AOII_STATUS_OK = 0,
  AOII_STATUS_NULL_POINTER = 1,
  AOII_STATUS_INVALID_GENERATOR = 2,
  AOII_STATUS_INVALID_ARGUMENT = 3,
  AOII_STATUS_BUFFER_TOO_SMALL = 4,
  AOII_STATUS_NUMERICAL = 5,
  AOII_STATUS_PANIC = 6,
} AoiiStatus;

typedef enum AoiiSolveStatus {
  AOII_SOLVE_STATUS_CONVERGED = 0,
  AOII_SOLVE_STATUS_ITERATION_CAP_HIT = 1,
  AOII_SOLVE_STATUS_BUDGET_SLACK_AT_ZERO_LAMBDA = 2,
} AoiiSolveStatus;

/**
 * Opaque handle to a validated CTMC generator.
 */
typedef struct AoiiGenerator AoiiGenerator;

typedef struct AoiiSyncResult {
  double maoii;
  double rate;
} AoiiSyncResult;

typedef struct AoiiSolution {
  double lambda;
  double maoii;
  double rate;
  double eta;
  uint32_t policy_iterations;
  uint32_t bisection_steps;
  enum AoiiSolveStatus status;
} AoiiSolution;

typedef struct AoiiSimResult {
  double maoii_hat;
  double rate_hat;
  double stderr_maoii;
  double stderr_rate;
  uint64_t cycles_run;
  uint64_t transmissions;
  uint64_t preemptions;
} AoiiSimResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds a generator from `n * n` row-major rates. The handle must be
 * released with `aoii_generator_free`.
 *
 * # Safety
 * `rates` must point to `n * n` readable doubles and `out` to writable
 * storage for one pointer.
 */
enum AoiiStatus aoii_generator_new(const double *rates, size_t n, struct AoiiGenerator **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `g` must be null or a handle from `aoii_generator_new` not yet freed.
 */
void aoii_generator_free(struct AoiiGenerator *g);

/**
 * Number of states, or 0 for a null handle.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
size_t aoii_generator_states(const struct AoiiGenerator *g);

/**
 * Long-run MAoII and sampling rate of a threshold vector.
 *
 * # Safety
 * `g` must be a live handle, `tau` must hold `n` doubles and `out` must be
 * writable.
 */
enum AoiiStatus aoii_sync_chain(const struct AoiiGenerator *g,
                                double mu,
                                const double *tau,
                                size_t n,
                                struct AoiiSyncResult *out);

/**
 * Long-run MAoII and sampling rate of the Poisson baseline.
 *
 * # Safety
 * `g` must be a live handle and `out` writable.
 */
enum AoiiStatus aoii_poisson_sync_chain(const struct AoiiGenerator *g,
                                        double mu,
                                        double gamma,
                                        struct AoiiSyncResult *out);

/**
 * Solves the budget-constrained problem with default tolerances and
 * writes the thresholds to `tau_out`.
 *
 * # Safety
 * `g` must be a live handle, `tau_out` must have room for `tau_len`
 * doubles and `out` must be writable.
 */
enum AoiiStatus aoii_solve(const struct AoiiGenerator *g,
                           double mu,
                           double budget,
                           double *tau_out,
                           size_t tau_len,
                           struct AoiiSolution *out);

/**
 * Simulates a threshold policy for `cycles` synchronization cycles.
 *
 * # Safety
 * `g` must be a live handle, `tau` must hold `n` doubles and `out` must be
 * writable.
 */
enum AoiiStatus aoii_simulate_thresholds(const struct AoiiGenerator *g,
                                         double mu,
                                         const double *tau,
                                         size_t n,
                                         uint64_t cycles,
                                         uint64_t seed,
                                         struct AoiiSimResult *out);

/**
 * Simulates the Poisson baseline at intensity `gamma`.
 *
 * # Safety
 * `g` must be a live handle and `out` writable.
 */
enum AoiiStatus aoii_simulate_poisson(const struct AoiiGenerator *g,
                                      double mu,
                                      double gamma,
                                      uint64_t cycles,
                                      uint64_t seed,
                                      struct AoiiSimResult *out);

/**
 * Message for the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *aoii_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *aoii_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AOII_H */
