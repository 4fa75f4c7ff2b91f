#ifndef BIRKHOFF_PS_H
#define BIRKHOFF_PS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define BPS_GRID_CGL 0

#define BPS_GRID_LGL 1

#define BPS_GRID_LGR 2

#define BPS_GRID_CG 3

#define BPS_GRID_UNIFORM 4

#define BPS_CASE_A 0

#define BPS_CASE_B 1

#define BPS_MATRIX_INNER_D 0

#define BPS_MATRIX_C_LAGR 1

#define BPS_MATRIX_C_BIRK 2

#define BPS_MATRIX_A_BIRK 3

#define BPS_METHOD_LAGRANGE 0

#define BPS_METHOD_BIRKHOFF_A 1

#define BPS_METHOD_BIRKHOFF_B 2

#define BPS_METHOD_LEFT_PRECOND_A 3

#define BPS_SOLVE_OPTIMAL 0

#define BPS_SOLVE_MAX_ITER 1

#define BPS_SOLVE_INFEASIBLE 2

#define BPS_SOLVE_NUMERICAL_FAILURE 3

/**
 * Collocation grid on `[-1, 1]`.
 */
typedef struct BpsGrid BpsGrid;

/**
 * Built-in optimal control problem.
 */
typedef struct BpsProblem BpsProblem;

/**
 * Solved transcription.
 */
typedef struct BpsSolution BpsSolution;

/**
 * Result code of every entry point.
 */
typedef int32_t BpsStatus;

#define BPS_OK 0

#define BPS_NULL_POINTER 1

#define BPS_INVALID_ARGUMENT 2

#define BPS_SHAPE_MISMATCH 3

#define BPS_SINGULAR 4

#define BPS_NON_FINITE 5

#define BPS_NUMERICAL_FAILURE 6

#define BPS_BUFFER_TOO_SMALL 7

#define BPS_PANIC 8

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *bps_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bps_version(void);

/**
 * Creates a grid of order `n` (`n + 1` nodes).
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
BpsStatus bps_grid_new(uint32_t kind, size_t n, struct BpsGrid **out);

/**
 * # Safety
 * `grid` must come from [`bps_grid_new`] and not be used afterwards.
 */
void bps_grid_free(struct BpsGrid *grid);

/**
 * # Safety
 * `grid` must be a live handle and `order` valid for writing.
 */
BpsStatus bps_grid_order(const struct BpsGrid *grid, size_t *order);

/**
 * Nodes on `[-1, 1]`, `order + 1` values.
 *
 * # Safety
 * `grid` must be a live handle and `out` valid for `len` doubles.
 */
BpsStatus bps_grid_nodes(const struct BpsGrid *grid, double *out, size_t len);

/**
 * Differentiation matrix, `(N+1)²` values in row-major order.
 *
 * # Safety
 * `grid` must be a live handle and `out` valid for `len` doubles.
 */
BpsStatus bps_diff_matrix(const struct BpsGrid *grid, double *out, size_t len);

/**
 * Birkhoff matrix of the given case, `N²` values in row-major order.
 *
 * # Safety
 * `grid` must be a live handle and `out` valid for `len` doubles.
 */
BpsStatus bps_birkhoff_matrix(const struct BpsGrid *grid, uint32_t case_, double *out, size_t len);

/**
 * `max |D_ω B_ω - I|` for the given case.
 *
 * # Safety
 * `grid` must be a live handle and `residual` valid for writing.
 */
BpsStatus bps_theorem1_residual(const struct BpsGrid *grid, uint32_t case_, double *residual);

/**
 * 2-norm condition number of one of the test matrices.
 *
 * # Safety
 * `kappa` must be valid for writing.
 */
BpsStatus bps_condition_number(uint32_t kind, size_t n, uint32_t matrix, double *kappa);

/**
 * 2-norm condition number of a row-major `rows × cols` matrix.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles and `kappa` be valid for writing.
 */
BpsStatus bps_cond2(const double *data, size_t rows, size_t cols, double *kappa);

/**
 * Builds a problem from a JSON descriptor such as
 * `{"problem": "oxfer", "A": 0.01}`, `{"problem": "double-integrator"}` or
 * `{"problem": "regulator", "x0": 1, "horizon": 2}`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writing.
 */
BpsStatus bps_problem_from_json(const char *json, struct BpsProblem **out);

/**
 * # Safety
 * `problem` must come from [`bps_problem_from_json`] and not be used
 * afterwards.
 */
void bps_problem_free(struct BpsProblem *problem);

/**
 * State and control dimensions.
 *
 * # Safety
 * `problem` must be a live handle; `nx` and `nu` valid for writing.
 */
BpsStatus bps_problem_dims(const struct BpsProblem *problem, size_t *nx, size_t *nu);

/**
 * Transcribes `problem` on a grid of order `n` and solves it. A non-optimal
 * solver outcome still returns `BPS_OK` and a solution; inspect it with
 * [`bps_solution_status`]. `options_json` may be null for defaults.
 *
 * # Safety
 * `problem` must be a live handle, `options_json` null or a NUL-terminated
 * string, and `out` valid for writing.
 */
BpsStatus bps_solve(const struct BpsProblem *problem, uint32_t grid_kind_, size_t n, uint32_t method_, const char *options_json, struct BpsSolution **out);

/**
 * # Safety
 * `solution` must come from [`bps_solve`] and not be used afterwards.
 */
void bps_solution_free(struct BpsSolution *solution);

/**
 * One of the `BPS_SOLVE_*` codes.
 *
 * # Safety
 * `solution` must be a live handle and `status` valid for writing.
 */
BpsStatus bps_solution_status(const struct BpsSolution *solution, int32_t *status);

/**
 * Final time, objective, constraint violation and iteration count.
 *
 * # Safety
 * `solution` must be a live handle; every output must be valid for writing.
 */
BpsStatus bps_solution_summary(const struct BpsSolution *solution, double *final_time, double *objective, double *feasibility, size_t *iterations);

/**
 * Node states, `(N+1) × nx` row-major.
 *
 * # Safety
 * `solution` must be a live handle and `out` valid for `len` doubles.
 */
BpsStatus bps_solution_states(const struct BpsSolution *solution, double *out, size_t len);

/**
 * Node controls, `(N+1) × nu` row-major.
 *
 * # Safety
 * `solution` must be a live handle and `out` valid for `len` doubles.
 */
BpsStatus bps_solution_controls(const struct BpsSolution *solution, double *out, size_t len);

/**
 * Solution as JSON, in the format the command-line tool writes. `len`
 * receives the byte count excluding the NUL; pass a null `buf` to query it.
 *
 * # Safety
 * `solution` must be a live handle, `buf` null or valid for `cap` bytes,
 * and `len` valid for writing.
 */
BpsStatus bps_solution_json(const struct BpsSolution *solution, char *buf, size_t cap, size_t *len);

/**
 * Propagates the solution's interpolated controls from its initial state
 * and reports the largest deviation per state (`nx` values) and the
 * terminal constraint miss.
 *
 * # Safety
 * `solution` must be a live handle, `per_state` valid for `len` doubles and
 * `terminal_miss` valid for writing.
 */
BpsStatus bps_propagate(const struct BpsSolution *solution, double rtol, double atol, double *per_state, size_t len, double *terminal_miss);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIRKHOFF_PS_H */
