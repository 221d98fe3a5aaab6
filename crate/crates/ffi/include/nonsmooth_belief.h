#ifndef NONSMOOTH_BELIEF_H
#define NONSMOOTH_BELIEF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum NsbStatus {
  NSB_STATUS_OK = 0,
  NSB_STATUS_NULL_POINTER = 1,
  // Bad dimensions, names, configs or out-of-domain numbers.
  NSB_STATUS_INVALID_ARGUMENT = 2,
  NSB_STATUS_NOT_PSD = 3,
  // Vanishing surface normal, projected variance or sliding denominator.
  NSB_STATUS_DEGENERATE = 4,
  // Non-finite values or an exhausted event budget during integration.
  NSB_STATUS_DIVERGENCE = 5,
  NSB_STATUS_IO = 6,
  // A Rust panic was caught at the boundary.
  NSB_STATUS_PANIC = 7,
} NsbStatus;

// Gaussian belief `N(μ, Σ)`.
typedef struct NsbBelief NsbBelief;

// Switched dynamics: a registry model or a user-supplied affine pair.
typedef struct NsbModel NsbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *nsb_version(void);

// Message of the last failure on this thread, or null if none occurred.
// The pointer stays valid until the next failing call on this thread.
const char *nsb_last_error(void);

// Creates a belief from `mean[dim]` and row-major `cov[dim * dim]`.
//
// # Safety
// The arrays must hold the stated number of elements; `out` must be writable.
enum NsbStatus nsb_belief_new(uintptr_t dim,
                              const double *mean,
                              const double *cov,
                              struct NsbBelief **out);

// # Safety
// `belief` must come from this library and not be freed twice. Null is a no-op.
void nsb_belief_free(struct NsbBelief *belief);

// State dimension, or 0 for a null handle.
//
// # Safety
// `belief` must be null or a live handle.
uintptr_t nsb_belief_dim(const struct NsbBelief *belief);

// Copies the mean into `out[len]`; `len` must be at least the dimension.
//
// # Safety
// `belief` must be a live handle and `out` must hold `len` doubles.
enum NsbStatus nsb_belief_mean(const struct NsbBelief *belief, double *out, uintptr_t len);

// Copies the covariance row-major into `out[len]`; `len ≥ dim²`.
//
// # Safety
// `belief` must be a live handle and `out` must hold `len` doubles.
enum NsbStatus nsb_belief_cov(const struct NsbBelief *belief, double *out, uintptr_t len);

// Looks up a registry model with its default parameters.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum NsbStatus nsb_model_builtin(const char *name, struct NsbModel **out);

// `f_i(x) = A_i x + f̄_i`, switching on `gᵀ(x - x̄) = 0`; mode 2 is
// `gᵀ(x - x̄) > 0`. Matrices are row-major `dim × dim`.
//
// # Safety
// Every array must hold the stated number of elements; `out` must be writable.
enum NsbStatus nsb_model_affine(uintptr_t dim,
                                const double *a1,
                                const double *a2,
                                const double *f1bar,
                                const double *f2bar,
                                const double *g,
                                const double *xbar,
                                struct NsbModel **out);

// # Safety
// `model` must come from this library and not be freed twice. Null is a no-op.
void nsb_model_free(struct NsbModel *model);

// # Safety
// `model` must be null or a live handle.
uintptr_t nsb_model_state_dim(const struct NsbModel *model);

// # Safety
// `model` must be null or a live handle.
uintptr_t nsb_model_control_dim(const struct NsbModel *model);

// Default initial belief of a registry model.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum NsbStatus nsb_model_initial_belief(const struct NsbModel *model, struct NsbBelief **out);

// Propagates `belief` to `t_final` with the closed-form moment dynamics,
// `steps` RK4 steps and the constant control `u[u_len]`.
//
// # Safety
// Handles must be live, `u` must hold `u_len` doubles (may be null when 0)
// and `out` must be writable.
enum NsbStatus nsb_propagate(const struct NsbModel *model,
                             const struct NsbBelief *belief,
                             const double *u,
                             uintptr_t u_len,
                             double t_final,
                             uintptr_t steps,
                             struct NsbBelief **out);

// Empirical moments at `t_final` of `n_samples` switch-detecting sample
// paths with step `h`, drawn from `belief` with `seed`.
//
// # Safety
// As for [`nsb_propagate`].
enum NsbStatus nsb_monte_carlo(const struct NsbModel *model,
                               const struct NsbBelief *belief,
                               const double *u,
                               uintptr_t u_len,
                               double t_final,
                               double h,
                               uintptr_t n_samples,
                               uint64_t seed,
                               struct NsbBelief **out);

// Runs a named experiment and writes its artifacts into `out_dir`.
// `config_json` may be null for the defaults; otherwise its `experiment`
// must equal `name`. Solver non-convergence is not an error.
//
// # Safety
// String arguments must be NUL-terminated; `config_json` may be null.
enum NsbStatus nsb_run_experiment(const char *name,
                                  const char *config_json,
                                  uint64_t seed,
                                  const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NONSMOOTH_BELIEF_H */
