//! C ABI over the toolkit.
//!
//! Every function returns a [`BpsStatus`]; on failure a message is kept per
//! thread and read back with [`bps_last_error`]. Objects cross the boundary as
//! opaque handles that the caller frees with the matching `*_free`. Array
//! outputs go into caller buffers whose length is passed in elements; a
//! short buffer yields `BPS_BUFFER_TOO_SMALL` with nothing written.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use birkhoff_ps::birkhoff::{build_birkhoff, theorem1_residual, BirkhoffCase};
use birkhoff_ps::cli::SolutionFile;
use birkhoff_ps::conditioning::{cond2, condition_numbers, MatrixKind};
use birkhoff_ps::grid::{Grid, GridKind};
use birkhoff_ps::interp::{build_basis, diff_matrix};
use birkhoff_ps::nlpsolve::{solve, SolveStatus, SolverOptions};
use birkhoff_ps::ocp::{OcpProblem, ProblemDescriptor};
use birkhoff_ps::transcribe::{transcribe, MethodVariant};
use birkhoff_ps::validate::{feasibility_error, propagate};
use birkhoff_ps::Error;

/// Result code of every entry point.
pub type BpsStatus = i32;

pub const BPS_OK: BpsStatus = 0;
pub const BPS_NULL_POINTER: BpsStatus = 1;
pub const BPS_INVALID_ARGUMENT: BpsStatus = 2;
pub const BPS_SHAPE_MISMATCH: BpsStatus = 3;
pub const BPS_SINGULAR: BpsStatus = 4;
pub const BPS_NON_FINITE: BpsStatus = 5;
pub const BPS_NUMERICAL_FAILURE: BpsStatus = 6;
pub const BPS_BUFFER_TOO_SMALL: BpsStatus = 7;
pub const BPS_PANIC: BpsStatus = 8;

pub const BPS_GRID_CGL: u32 = 0;
pub const BPS_GRID_LGL: u32 = 1;
pub const BPS_GRID_LGR: u32 = 2;
pub const BPS_GRID_CG: u32 = 3;
pub const BPS_GRID_UNIFORM: u32 = 4;

pub const BPS_CASE_A: u32 = 0;
pub const BPS_CASE_B: u32 = 1;

pub const BPS_MATRIX_INNER_D: u32 = 0;
pub const BPS_MATRIX_C_LAGR: u32 = 1;
pub const BPS_MATRIX_C_BIRK: u32 = 2;
pub const BPS_MATRIX_A_BIRK: u32 = 3;

pub const BPS_METHOD_LAGRANGE: u32 = 0;
pub const BPS_METHOD_BIRKHOFF_A: u32 = 1;
pub const BPS_METHOD_BIRKHOFF_B: u32 = 2;
pub const BPS_METHOD_LEFT_PRECOND_A: u32 = 3;

pub const BPS_SOLVE_OPTIMAL: i32 = 0;
pub const BPS_SOLVE_MAX_ITER: i32 = 1;
pub const BPS_SOLVE_INFEASIBLE: i32 = 2;
pub const BPS_SOLVE_NUMERICAL_FAILURE: i32 = 3;

/// Collocation grid on `[-1, 1]`.
pub struct BpsGrid {
    grid: Grid,
}

/// Built-in optimal control problem.
pub struct BpsProblem {
    desc: ProblemDescriptor,
    prob: Box<dyn OcpProblem>,
}

/// Solved transcription.
pub struct BpsSolution {
    file: SolutionFile,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Fail(BpsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter { .. } | Error::UnsupportedGrid { .. } | Error::OutOfDomain { .. } => {
                BPS_INVALID_ARGUMENT
            }
            Error::DuplicateNodes { .. } => BPS_INVALID_ARGUMENT,
            Error::ShapeMismatch { .. } => BPS_SHAPE_MISMATCH,
            Error::SingularSystem { .. } => BPS_SINGULAR,
            Error::NonFinite(_) => BPS_NON_FINITE,
            Error::Json(_) => BPS_INVALID_ARGUMENT,
            _ => BPS_NUMERICAL_FAILURE,
        };
        Fail(code, e.to_string())
    }
}

fn fail<T>(code: BpsStatus, msg: impl Into<String>) -> Result<T, Fail> {
    Err(Fail(code, msg.into()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BpsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BPS_OK
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            BPS_PANIC
        }
    }
}

fn grid_kind(k: u32) -> Result<GridKind, Fail> {
    Ok(match k {
        BPS_GRID_CGL => GridKind::Cgl,
        BPS_GRID_LGL => GridKind::Lgl,
        BPS_GRID_LGR => GridKind::Lgr,
        BPS_GRID_CG => GridKind::Cg,
        BPS_GRID_UNIFORM => GridKind::Uniform,
        _ => return fail(BPS_INVALID_ARGUMENT, format!("unknown grid kind {k}")),
    })
}

fn case(c: u32) -> Result<BirkhoffCase, Fail> {
    match c {
        BPS_CASE_A => Ok(BirkhoffCase::A),
        BPS_CASE_B => Ok(BirkhoffCase::B),
        _ => fail(BPS_INVALID_ARGUMENT, format!("unknown Birkhoff case {c}")),
    }
}

fn matrix_kind(m: u32) -> Result<MatrixKind, Fail> {
    MatrixKind::ALL
        .get(m as usize)
        .copied()
        .map_or_else(|| fail(BPS_INVALID_ARGUMENT, format!("unknown matrix kind {m}")), Ok)
}

fn method(m: u32) -> Result<MethodVariant, Fail> {
    MethodVariant::ALL
        .get(m as usize)
        .copied()
        .map_or_else(|| fail(BPS_INVALID_ARGUMENT, format!("unknown method {m}")), Ok)
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().map_or_else(|| fail(BPS_NULL_POINTER, format!("{what} is null")), Ok)
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return fail(BPS_NULL_POINTER, format!("{what} is null"));
    }
    p.write(v);
    Ok(())
}

unsafe fn fill(out: *mut f64, len: usize, values: impl ExactSizeIterator<Item = f64>) -> Result<(), Fail> {
    if out.is_null() {
        return fail(BPS_NULL_POINTER, "output buffer is null");
    }
    if len < values.len() {
        return fail(BPS_BUFFER_TOO_SMALL, format!("buffer holds {len} values, {} needed", values.len()));
    }
    for (i, v) in values.enumerate() {
        out.add(i).write(v);
    }
    Ok(())
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return fail(BPS_NULL_POINTER, format!("{what} is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_or_else(|_| fail(BPS_INVALID_ARGUMENT, format!("{what} is not UTF-8")), Ok)
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a grid of order `n` (`n + 1` nodes).
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn bps_grid_new(kind: u32, n: usize, out: *mut *mut BpsGrid) -> BpsStatus {
    guard(|| {
        let grid = Grid::new(grid_kind(kind)?, n)?;
        write_out(out, Box::into_raw(Box::new(BpsGrid { grid })), "out")
    })
}

/// # Safety
/// `grid` must come from [`bps_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bps_grid_free(grid: *mut BpsGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle and `order` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_grid_order(grid: *const BpsGrid, order: *mut usize) -> BpsStatus {
    guard(|| write_out(order, deref(grid, "grid")?.grid.order(), "order"))
}

/// Nodes on `[-1, 1]`, `order + 1` values.
///
/// # Safety
/// `grid` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bps_grid_nodes(grid: *const BpsGrid, out: *mut f64, len: usize) -> BpsStatus {
    guard(|| fill(out, len, deref(grid, "grid")?.grid.nodes().iter().copied()))
}

/// Differentiation matrix, `(N+1)²` values in row-major order.
///
/// # Safety
/// `grid` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bps_diff_matrix(grid: *const BpsGrid, out: *mut f64, len: usize) -> BpsStatus {
    guard(|| {
        let ops = diff_matrix(&build_basis(&deref(grid, "grid")?.grid)?);
        fill(out, len, ops.d.transpose().iter().copied())
    })
}

/// Birkhoff matrix of the given case, `N²` values in row-major order.
///
/// # Safety
/// `grid` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bps_birkhoff_matrix(grid: *const BpsGrid, case_: u32, out: *mut f64, len: usize) -> BpsStatus {
    guard(|| {
        let birk = build_birkhoff(&build_basis(&deref(grid, "grid")?.grid)?, case(case_)?)?;
        fill(out, len, birk.b.transpose().iter().copied())
    })
}

/// `max |D_ω B_ω - I|` for the given case.
///
/// # Safety
/// `grid` must be a live handle and `residual` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_theorem1_residual(grid: *const BpsGrid, case_: u32, residual: *mut f64) -> BpsStatus {
    guard(|| {
        let basis = build_basis(&deref(grid, "grid")?.grid)?;
        let birk = build_birkhoff(&basis, case(case_)?)?;
        write_out(residual, theorem1_residual(&diff_matrix(&basis), &birk)?, "residual")
    })
}

/// 2-norm condition number of one of the test matrices.
///
/// # Safety
/// `kappa` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_condition_number(kind: u32, n: usize, matrix: u32, kappa: *mut f64) -> BpsStatus {
    guard(|| {
        let m = matrix_kind(matrix)?;
        let (_, k) = condition_numbers(grid_kind(kind)?, n, &[m]).pop().expect("one result per matrix");
        write_out(kappa, k?, "kappa")
    })
}

/// 2-norm condition number of a row-major `rows × cols` matrix.
///
/// # Safety
/// `data` must hold `rows * cols` doubles and `kappa` be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_cond2(data: *const f64, rows: usize, cols: usize, kappa: *mut f64) -> BpsStatus {
    guard(|| {
        if data.is_null() {
            return fail(BPS_NULL_POINTER, "data is null");
        }
        let len = rows.checked_mul(cols).filter(|&l| l > 0);
        let Some(len) = len else {
            return fail(BPS_INVALID_ARGUMENT, "matrix must be non-empty");
        };
        let s = std::slice::from_raw_parts(data, len);
        let m = nalgebra::DMatrix::from_row_slice(rows, cols, s);
        write_out(kappa, cond2(&m)?, "kappa")
    })
}

/// Builds a problem from a JSON descriptor such as
/// `{"problem": "oxfer", "A": 0.01}`, `{"problem": "double-integrator"}` or
/// `{"problem": "regulator", "x0": 1, "horizon": 2}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_problem_from_json(json: *const c_char, out: *mut *mut BpsProblem) -> BpsStatus {
    guard(|| {
        let desc = ProblemDescriptor::from_json(c_str(json, "json")?)?;
        let prob = desc.build()?;
        write_out(out, Box::into_raw(Box::new(BpsProblem { desc, prob })), "out")
    })
}

/// # Safety
/// `problem` must come from [`bps_problem_from_json`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn bps_problem_free(problem: *mut BpsProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// State and control dimensions.
///
/// # Safety
/// `problem` must be a live handle; `nx` and `nu` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_problem_dims(problem: *const BpsProblem, nx: *mut usize, nu: *mut usize) -> BpsStatus {
    guard(|| {
        let p = deref(problem, "problem")?;
        write_out(nx, p.prob.nx(), "nx")?;
        write_out(nu, p.prob.nu(), "nu")
    })
}

/// Transcribes `problem` on a grid of order `n` and solves it. A non-optimal
/// solver outcome still returns `BPS_OK` and a solution; inspect it with
/// [`bps_solution_status`]. `options_json` may be null for defaults.
///
/// # Safety
/// `problem` must be a live handle, `options_json` null or a NUL-terminated
/// string, and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_solve(
    problem: *const BpsProblem,
    grid_kind_: u32,
    n: usize,
    method_: u32,
    options_json: *const c_char,
    out: *mut *mut BpsSolution,
) -> BpsStatus {
    guard(|| {
        let p = deref(problem, "problem")?;
        let opts: SolverOptions = if options_json.is_null() {
            SolverOptions::default()
        } else {
            serde_json::from_str(c_str(options_json, "options_json")?).map_err(Error::from)?
        };
        let variant = method(method_)?;
        let grid = Grid::new(grid_kind(grid_kind_)?, n)?;
        let t = transcribe(p.prob.as_ref(), &grid, variant)?;
        let sol = solve(&t, &opts, &t.initial_point()?)?;
        let file = SolutionFile {
            problem: p.desc.clone(),
            method: variant,
            status: sol.status,
            kkt: sol.kkt,
            iterations: sol.iterations,
            message: sol.message.clone(),
            trajectory: t.extract_trajectory(&sol.x)?,
        };
        write_out(out, Box::into_raw(Box::new(BpsSolution { file })), "out")
    })
}

/// # Safety
/// `solution` must come from [`bps_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn bps_solution_free(solution: *mut BpsSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// One of the `BPS_SOLVE_*` codes.
///
/// # Safety
/// `solution` must be a live handle and `status` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_solution_status(solution: *const BpsSolution, status: *mut i32) -> BpsStatus {
    guard(|| {
        let code = match deref(solution, "solution")?.file.status {
            SolveStatus::Optimal => BPS_SOLVE_OPTIMAL,
            SolveStatus::MaxIter => BPS_SOLVE_MAX_ITER,
            SolveStatus::Infeasible => BPS_SOLVE_INFEASIBLE,
            SolveStatus::NumericalFailure => BPS_SOLVE_NUMERICAL_FAILURE,
        };
        write_out(status, code, "status")
    })
}

/// Final time, objective, constraint violation and iteration count.
///
/// # Safety
/// `solution` must be a live handle; every output must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_solution_summary(
    solution: *const BpsSolution,
    final_time: *mut f64,
    objective: *mut f64,
    feasibility: *mut f64,
    iterations: *mut usize,
) -> BpsStatus {
    guard(|| {
        let f = &deref(solution, "solution")?.file;
        write_out(final_time, f.trajectory.tf, "final_time")?;
        write_out(objective, f.trajectory.objective, "objective")?;
        write_out(feasibility, f.kkt.feasibility, "feasibility")?;
        write_out(iterations, f.iterations, "iterations")
    })
}

/// Node states, `(N+1) × nx` row-major.
///
/// # Safety
/// `solution` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bps_solution_states(solution: *const BpsSolution, out: *mut f64, len: usize) -> BpsStatus {
    guard(|| {
        let t = &deref(solution, "solution")?.file.trajectory;
        let v: Vec<f64> = t.x.iter().flatten().copied().collect();
        fill(out, len, v.into_iter())
    })
}

/// Node controls, `(N+1) × nu` row-major.
///
/// # Safety
/// `solution` must be a live handle and `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bps_solution_controls(solution: *const BpsSolution, out: *mut f64, len: usize) -> BpsStatus {
    guard(|| {
        let t = &deref(solution, "solution")?.file.trajectory;
        let v: Vec<f64> = t.u.iter().flatten().copied().collect();
        fill(out, len, v.into_iter())
    })
}

/// Solution as JSON, in the format the command-line tool writes. `len`
/// receives the byte count excluding the NUL; pass a null `buf` to query it.
///
/// # Safety
/// `solution` must be a live handle, `buf` null or valid for `cap` bytes,
/// and `len` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_solution_json(
    solution: *const BpsSolution,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> BpsStatus {
    guard(|| {
        let text = serde_json::to_string(&deref(solution, "solution")?.file).map_err(Error::from)?;
        write_out(len, text.len(), "len")?;
        if buf.is_null() {
            return Ok(());
        }
        if cap < text.len() + 1 {
            return fail(BPS_BUFFER_TOO_SMALL, format!("buffer holds {cap} bytes, {} needed", text.len() + 1));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        buf.add(text.len()).write(0);
        Ok(())
    })
}

/// Propagates the solution's interpolated controls from its initial state
/// and reports the largest deviation per state (`nx` values) and the
/// terminal constraint miss.
///
/// # Safety
/// `solution` must be a live handle, `per_state` valid for `len` doubles and
/// `terminal_miss` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bps_propagate(
    solution: *const BpsSolution,
    rtol: f64,
    atol: f64,
    per_state: *mut f64,
    len: usize,
    terminal_miss: *mut f64,
) -> BpsStatus {
    guard(|| {
        let f = &deref(solution, "solution")?.file;
        let prob = f.problem.build()?;
        let fe = feasibility_error(&propagate(prob.as_ref(), &f.trajectory, rtol, atol)?);
        fill(per_state, len, fe.per_state.iter().copied())?;
        write_out(terminal_miss, fe.terminal_miss, "terminal_miss")
    })
}
