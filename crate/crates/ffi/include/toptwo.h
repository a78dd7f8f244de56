#ifndef TOPTWO_H
#define TOPTWO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum tt_status {
  TT_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  TT_NULL_POINTER = 1,
  /**
   * A parameter lies outside the domain of the operation.
   */
  TT_DOMAIN = 2,
  /**
   * Malformed input: bad index, length, probability vector or observation.
   */
  TT_INPUT = 3,
  /**
   * A numerical routine failed to converge.
   */
  TT_SOLVER = 4,
  /**
   * An output buffer is too small.
   */
  TT_BUFFER_TOO_SMALL = 5,
  /**
   * Internal failure, including a caught panic.
   */
  TT_PANIC = 6,
} tt_status;

typedef enum tt_model_kind {
  TT_BERNOULLI = 0,
  TT_GAUSSIAN = 1,
} tt_model_kind;

typedef enum tt_belief_kind {
  /**
   * Beta priors for Bernoulli arms, normal priors for Gaussian arms.
   */
  TT_CONJUGATE = 0,
  /**
   * Uniform prior on a bounded grid.
   */
  TT_GRID = 1,
} tt_belief_kind;

typedef enum tt_rule {
  TT_TS = 0,
  TT_TTTS = 1,
  TT_TTPS = 2,
  TT_TTVS = 3,
  TT_UNIFORM = 4,
} tt_rule;

/**
 * Evolving belief state with its own random stream and cached tables.
 */
typedef struct tt_belief tt_belief;

/**
 * Problem instance: a model and the true arm means.
 */
typedef struct tt_instance tt_instance;

/**
 * Optimal allocation and exponent.
 */
typedef struct tt_solution tt_solution;

/**
 * Observation model. `sigma`, `lo` and `hi` are read only for Gaussian arms.
 */
typedef struct tt_model {
  enum tt_model_kind kind;
  double sigma;
  double lo;
  double hi;
} tt_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. The pointer stays
 * valid until the next library call on the same thread.
 */
const char *tt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tt_version(void);

/**
 * Frees a string returned by the library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void tt_string_free(char *s);

/**
 * KL divergence `d(p, q)` between two members of `model`.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum tt_status tt_kl(const struct tt_model *model, double p, double q, double *out);

/**
 * Pairwise evidence rate `C(β, ψ)` of ruling out an arm with mean
 * `mean_alt` against one with mean `mean_top`.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum tt_status tt_c_cost(const struct tt_model *model,
                         double beta,
                         double psi,
                         double mean_top,
                         double mean_alt,
                         double *out);

/**
 * TTTS selection probabilities for optimality probabilities `alpha`.
 * `out` receives `k` values.
 *
 * # Safety
 * `alpha` must hold `k` readable values and `out` `k` writable ones.
 */
enum tt_status tt_psi_ttts(const double *alpha, size_t k, double beta, double *out);

/**
 * Creates an instance from `k` distinct arm means.
 *
 * # Safety
 * `model` must be valid, `means` must hold `k` values, `out` must be valid.
 */
enum tt_status tt_instance_new(const struct tt_model *model,
                               const double *means,
                               size_t k,
                               struct tt_instance **out);

/**
 * Number of arms, or 0 for NULL.
 *
 * # Safety
 * `inst` must be NULL or a live instance.
 */
size_t tt_instance_k(const struct tt_instance *inst);

/**
 * Index of the best arm, or `SIZE_MAX` for NULL.
 *
 * # Safety
 * `inst` must be NULL or a live instance.
 */
size_t tt_instance_best(const struct tt_instance *inst);

/**
 * # Safety
 * `inst` must be NULL or a live instance, not used afterwards.
 */
void tt_instance_free(struct tt_instance *inst);

/**
 * Solves for `Γ*_β` and its allocation.
 *
 * # Safety
 * `inst` must be a live instance and `out` a valid pointer.
 */
enum tt_status tt_solve_gamma_beta(const struct tt_instance *inst,
                                   double beta,
                                   struct tt_solution **out);

/**
 * Solves for `Γ* = max_β Γ*_β`, its maximizer and allocation.
 *
 * # Safety
 * `inst` must be a live instance and `out` a valid pointer.
 */
enum tt_status tt_solve_gamma_star(const struct tt_instance *inst, struct tt_solution **out);

/**
 * The exponent, or NaN for NULL.
 *
 * # Safety
 * `sol` must be NULL or a live solution.
 */
double tt_solution_gamma(const struct tt_solution *sol);

/**
 * Effort on the best arm, or NaN for NULL.
 *
 * # Safety
 * `sol` must be NULL or a live solution.
 */
double tt_solution_beta(const struct tt_solution *sol);

/**
 * Copies the allocation into `out`, which holds `len` values.
 *
 * # Safety
 * `sol` must be a live solution and `out` hold `len` writable values.
 */
enum tt_status tt_solution_psi(const struct tt_solution *sol, double *out, size_t len);

/**
 * # Safety
 * `sol` must be NULL or a live solution, not used afterwards.
 */
void tt_solution_free(struct tt_solution *sol);

/**
 * Creates a prior over `k` arms. `points` is read for grid beliefs only.
 * `seed` fixes the stream used by `tt_belief_select` and Monte Carlo
 * fallbacks.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum tt_status tt_belief_new(const struct tt_model *model,
                             size_t k,
                             enum tt_belief_kind kind,
                             size_t points,
                             uint64_t seed,
                             struct tt_belief **out);

/**
 * Absorbs observation `y` of arm `arm`.
 *
 * # Safety
 * `belief` must be a live belief.
 */
enum tt_status tt_belief_update(struct tt_belief *belief, size_t arm, double y);

/**
 * Posterior probability that each arm is best; `out` holds `len` values.
 *
 * # Safety
 * `belief` must be a live belief and `out` hold `len` writable values.
 */
enum tt_status tt_belief_alpha(struct tt_belief *belief, double *out, size_t len);

/**
 * Chooses the next arm to measure under `rule` with leader probability
 * `beta` (ignored by `TT_TS` and `TT_UNIFORM`).
 *
 * # Safety
 * `belief` and `out_arm` must be valid pointers.
 */
enum tt_status tt_belief_select(struct tt_belief *belief,
                                enum tt_rule rule,
                                double beta,
                                size_t *out_arm);

/**
 * Serializes the belief state as JSON into a new string owned by the caller.
 *
 * # Safety
 * `belief` and `out` must be valid pointers.
 */
enum tt_status tt_belief_to_json(const struct tt_belief *belief, char **out);

/**
 * Observations absorbed so far, or 0 for NULL.
 *
 * # Safety
 * `belief` must be NULL or a live belief.
 */
uint64_t tt_belief_n(const struct tt_belief *belief);

/**
 * # Safety
 * `belief` must be NULL or a live belief, not used afterwards.
 */
void tt_belief_free(struct tt_belief *belief);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TOPTWO_H */
