#ifndef MPGDA_H
#define MPGDA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Terminal state of a solve.
typedef enum MpgdaSolveStatus {
  MPGDA_SOLVE_STATUS_CONVERGED = 0,
  MPGDA_SOLVE_STATUS_MAX_ITERATIONS = 1,
  MPGDA_SOLVE_STATUS_SUBPROBLEM_FAILURE = 2,
} MpgdaSolveStatus;

// Result code of every fallible entry point.
typedef enum MpgdaStatus {
  MPGDA_STATUS_OK = 0,
  MPGDA_STATUS_NULL_ARGUMENT = 1,
  MPGDA_STATUS_INVALID_ARGUMENT = 2,
  MPGDA_STATUS_SOLVER_FAILURE = 3,
} MpgdaStatus;

// Opaque solve-outcome handle.
typedef struct MpgdaOutcome MpgdaOutcome;

// Opaque problem handle.
typedef struct MpgdaProblem MpgdaProblem;

// Options of the multi-descent-step / proximal-ascent solver.
typedef struct MpgdaPaOptions {
  double c1;
  double eta;
  double gamma0;
  double xi0;
  double theta;
  double tau1;
  double tau2;
  double l_min;
  double l_max;
  size_t t_k;
  double delta0;
  double epsilon;
  size_t max_outer;
  size_t max_backtracks;
} MpgdaPaOptions;

// Options of the single-loop proximal-gradient-ascent solver.
typedef struct MpgdaPgaOptions {
  double c1;
  double eta;
  double kappa;
  double rho;
  double l_min;
  double l_max;
  double epsilon;
  size_t max_outer;
  size_t max_backtracks;
} MpgdaPgaOptions;

// One per-iteration log row.
typedef struct MpgdaRecord {
  size_t k;
  double objective;
  double primal;
  double dual;
  double g_beta;
  size_t backtracks;
  size_t inner_iters;
  double elapsed_s;
  // Nonzero when the backtracking cap was hit at this iteration.
  int32_t backtrack_overflow;
} MpgdaRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The analytic circle benchmark.
struct MpgdaProblem *mpgda_problem_analytic_new(void);

// Fair sparse PCA on synthetic two-group data generated from `seed`
// (standardized per group), with `r` components and l1 weight `mu`.
// Returns NULL on invalid arguments.
struct MpgdaProblem *mpgda_problem_fspca_synthetic_new(uint64_t seed, size_t r, double mu);

// Sparse spectral clustering on a synthetic affinity built from `n` points
// of dimension `dim` drawn with `seed`; `p` clusters, l1 weight `mu`.
// Returns NULL on invalid arguments.
struct MpgdaProblem *mpgda_problem_ssc_synthetic_new(size_t n,
                                                     size_t dim,
                                                     uint64_t seed,
                                                     size_t p,
                                                     double mu);

// # Safety
// `problem` must come from one of the `mpgda_problem_*_new` constructors and
// not have been freed.
void mpgda_problem_free(struct MpgdaProblem *problem);

// Ambient dimension of the x iterate.
//
// # Safety
// `problem` must be a live handle.
size_t mpgda_problem_x_dim(const struct MpgdaProblem *problem);

// Dimension of the y iterate.
//
// # Safety
// `problem` must be a live handle.
size_t mpgda_problem_y_dim(const struct MpgdaProblem *problem);

// Fills `out` with the experiment defaults for this problem kind.
//
// # Safety
// `problem` must be a live handle; `out` must point to writable memory.
enum MpgdaStatus mpgda_pa_options_default(const struct MpgdaProblem *problem,
                                          struct MpgdaPaOptions *out);

// Fills `out` with PGA defaults; rho is chosen admissible for the problem's
// y-gradient Lipschitz constant.
//
// # Safety
// `problem` must be a live handle; `out` must point to writable memory.
enum MpgdaStatus mpgda_pga_options_default(const struct MpgdaProblem *problem,
                                           struct MpgdaPgaOptions *out);

// Runs the PA solver from the problem's default initialization for
// `init_seed`; on success `*out` owns the outcome.
//
// # Safety
// `problem` must be a live handle, `options` and `out` valid pointers.
enum MpgdaStatus mpgda_solve_pa(const struct MpgdaProblem *problem,
                                const struct MpgdaPaOptions *options,
                                uint64_t init_seed,
                                struct MpgdaOutcome **out);

// Runs the PGA solver from the problem's default initialization.
//
// # Safety
// `problem` must be a live handle, `options` and `out` valid pointers.
enum MpgdaStatus mpgda_solve_pga(const struct MpgdaProblem *problem,
                                 const struct MpgdaPgaOptions *options,
                                 uint64_t init_seed,
                                 struct MpgdaOutcome **out);

// # Safety
// `outcome` must come from a solve call and not have been freed.
void mpgda_outcome_free(struct MpgdaOutcome *outcome);

// # Safety
// `outcome` must be a live handle.
enum MpgdaSolveStatus mpgda_outcome_status(const struct MpgdaOutcome *outcome);

// Number of logged outer iterations.
//
// # Safety
// `outcome` must be a live handle.
size_t mpgda_outcome_trace_len(const struct MpgdaOutcome *outcome);

// Copies trace row `idx` into `record`.
//
// # Safety
// `outcome` must be a live handle; `record` must point to writable memory.
enum MpgdaStatus mpgda_outcome_record(const struct MpgdaOutcome *outcome,
                                      size_t idx,
                                      struct MpgdaRecord *record);

// Copies the final x iterate into `buf` (length must equal the ambient
// dimension).
//
// # Safety
// `outcome` must be a live handle; `buf` must point to `len` writable
// doubles.
enum MpgdaStatus mpgda_outcome_x(const struct MpgdaOutcome *outcome, double *buf, size_t len);

// Copies the final y iterate into `buf` (length must equal the y dimension).
//
// # Safety
// `outcome` must be a live handle; `buf` must point to `len` writable
// doubles.
enum MpgdaStatus mpgda_outcome_y(const struct MpgdaOutcome *outcome, double *buf, size_t len);

// Evaluates the game-stationarity measure at a caller-supplied pair.
//
// # Safety
// `problem` must be a live handle; `x`/`y` must point to `x_len`/`y_len`
// readable doubles; `out_measure` must be writable.
enum MpgdaStatus mpgda_game_stationarity(const struct MpgdaProblem *problem,
                                         const double *x,
                                         size_t x_len,
                                         const double *y,
                                         size_t y_len,
                                         double beta,
                                         double *out_measure);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MPGDA_H */
