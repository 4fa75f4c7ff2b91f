//! Dense augmented-Lagrangian solver for bound-constrained nonlinear programs
//! with general two-sided constraints `l ≤ g(x) ≤ u`.
//!
//! The outer loop updates first-order multiplier estimates and the penalty
//! parameter. Each subproblem is minimized over the variable box by Newton
//! steps on the augmented Lagrangian: the box-constrained quadratic model is
//! solved by a primal-dual active-set iteration on a diagonally shifted
//! Hessian, followed by Armijo backtracking.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fd;
use crate::linalg::{inf_norm, SparseMatrix};
use crate::ocp::Bounds;

/// Nonlinear program `min f(x)` s.t. `l_g ≤ g(x) ≤ u_g`, `l_x ≤ x ≤ u_x`.
///
/// Derivative methods default to central differences. Implementations must
/// be reentrant.
pub trait Nlp: Sync {
    fn n_vars(&self) -> usize;
    fn n_cons(&self) -> usize;
    fn var_bounds(&self) -> Bounds;
    fn con_bounds(&self) -> Bounds;

    fn objective(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        fd::gradient(x, |x| self.objective(x))
    }

    fn constraints(&self, x: &[f64], out: &mut [f64]);

    fn jacobian(&self, x: &[f64]) -> SparseMatrix {
        let j = fd::jacobian(x, self.n_cons(), |x, out| self.constraints(x, out));
        SparseMatrix::from_dense(&j)
    }

    /// Hessian of `obj_factor·f + yᵀg`.
    fn hessian(&self, x: &[f64], obj_factor: f64, y: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let lag_grad = |x: &[f64], out: &mut [f64]| {
            let g = self.gradient(x);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o = obj_factor * gi;
            }
            self.jacobian(x).tr_mul_vec_add(y, out);
        };
        let h = fd::jacobian(x, n, lag_grad);
        (&h + h.transpose()) * 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Bound on the constraint violation `‖g - P(g)‖_∞`.
    pub tol_feas: f64,
    /// Bound on the Lagrangian gradient and on complementarity.
    pub tol_opt: f64,
    /// Total projected-Newton iterations across all subproblems.
    pub max_iter: usize,
    /// Initial penalty; `None` balances the objective against the initial
    /// violation.
    pub rho_init: Option<f64>,
    pub rho_factor: f64,
    pub rho_max: f64,
    /// The penalty grows unless the violation falls below this fraction of
    /// its previous value.
    pub feas_decrease: f64,
    /// Safeguard on multiplier estimates.
    pub multiplier_max: f64,
    /// Minimize the violation alone before optimizing.
    pub feasibility_start: bool,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_feas: 1e-8,
            tol_opt: 1e-6,
            max_iter: 500,
            rho_init: None,
            rho_factor: 10.0,
            rho_max: 1e14,
            feas_decrease: 0.5,
            multiplier_max: 1e12,
            feasibility_start: true,
            verbose: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tol_feas", self.tol_feas),
            ("tol_opt", self.tol_opt),
            ("rho_init", self.rho_init.unwrap_or(1.0)),
            ("rho_max", self.rho_max),
            ("multiplier_max", self.multiplier_max),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.max_iter < 1 {
            return Err(invalid("max_iter", "must be at least 1"));
        }
        if !(self.rho_factor > 1.0) {
            return Err(invalid("rho_factor", "must exceed 1"));
        }
        if !(self.feas_decrease > 0.0 && self.feas_decrease < 1.0) {
            return Err(invalid("feas_decrease", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    Infeasible,
    NumericalFailure,
}

/// Non-negative multipliers of the lower and upper sides of each constraint
/// and variable bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub con_lower: Vec<f64>,
    pub con_upper: Vec<f64>,
    pub var_lower: Vec<f64>,
    pub var_upper: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(n: usize, m: usize) -> Self {
        Multipliers {
            con_lower: vec![0.0; m],
            con_upper: vec![0.0; m],
            var_lower: vec![0.0; n],
            var_upper: vec![0.0; n],
        }
    }

    /// Signed constraint multipliers `y = upper - lower`, so that
    /// `∇f + Jᵀy + (z_u - z_l) = 0` at a KKT point.
    pub fn signed(&self) -> Vec<f64> {
        self.con_upper.iter().zip(&self.con_lower).map(|(u, l)| u - l).collect()
    }

    fn from_signed(y: &[f64], zl: Vec<f64>, zu: Vec<f64>) -> Self {
        Multipliers {
            con_lower: y.iter().map(|&v| (-v).max(0.0)).collect(),
            con_upper: y.iter().map(|&v| v.max(0.0)).collect(),
            var_lower: zl,
            var_upper: zu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub inner_iterations: usize,
    pub rho: f64,
    pub violation: f64,
    pub stationarity: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub multipliers: Multipliers,
    pub status: SolveStatus,
    pub kkt: KktReport,
    /// Total projected-Newton iterations.
    pub iterations: usize,
    pub history: Vec<OuterRecord>,
    /// Index of the constraint (or `None` for the objective) that produced a
    /// non-finite value, for `NumericalFailure`.
    pub failed_constraint: Option<usize>,
    pub message: String,
}

fn project(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

fn violation(g: &[f64], cb: &Bounds) -> f64 {
    g.iter()
        .enumerate()
        .fold(0.0_f64, |m, (i, &v)| m.max((v - project(v, cb.lower[i], cb.upper[i])).abs()))
}

/// Stationarity, feasibility and complementarity of `(x, multipliers)`.
pub fn kkt_residual(nlp: &dyn Nlp, x: &[f64], mult: &Multipliers) -> Result<KktReport> {
    let (n, m) = (nlp.n_vars(), nlp.n_cons());
    let shapes = [
        ("point", x.len(), n),
        ("constraint lower multipliers", mult.con_lower.len(), m),
        ("constraint upper multipliers", mult.con_upper.len(), m),
        ("variable lower multipliers", mult.var_lower.len(), n),
        ("variable upper multipliers", mult.var_upper.len(), n),
    ];
    for (what, got, want) in shapes {
        if got != want {
            return Err(Error::ShapeMismatch {
                context: "kkt_residual",
                expected: format!("{want} entries in {what}"),
                got: got.to_string(),
            });
        }
    }
    let (vb, cb) = (nlp.var_bounds(), nlp.con_bounds());
    let mut g = vec![0.0; m];
    nlp.constraints(x, &mut g);
    let mut grad = nlp.gradient(x);
    nlp.jacobian(x).tr_mul_vec_add(&mult.signed(), &mut grad);
    for i in 0..n {
        grad[i] += mult.var_upper[i] - mult.var_lower[i];
    }
    let bound_viol = x
        .iter()
        .enumerate()
        .fold(0.0_f64, |a, (i, &v)| a.max((v - project(v, vb.lower[i], vb.upper[i])).abs()));
    let comp = |mult: f64, slack: f64| if mult == 0.0 { 0.0 } else { (mult * slack).abs() };
    let mut complementarity = 0.0_f64;
    for i in 0..m {
        if cb.lower[i] == cb.upper[i] {
            continue;
        }
        complementarity = complementarity
            .max(comp(mult.con_lower[i], g[i] - cb.lower[i]))
            .max(comp(mult.con_upper[i], cb.upper[i] - g[i]));
    }
    for i in 0..n {
        complementarity = complementarity
            .max(comp(mult.var_lower[i], x[i] - vb.lower[i]))
            .max(comp(mult.var_upper[i], vb.upper[i] - x[i]));
    }
    Ok(KktReport {
        stationarity: inf_norm(&grad),
        feasibility: violation(&g, &cb).max(bound_viol),
        complementarity,
    })
}

/// Bound multipliers read off the Lagrangian gradient at active bounds, and
/// the remaining (stationarity) residual.
fn bound_multipliers(x: &[f64], grad: &[f64], vb: &Bounds) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.len();
    let mut zl = vec![0.0; n];
    let mut zu = vec![0.0; n];
    let mut res = 0.0_f64;
    for i in 0..n {
        let gi = grad[i];
        let r = if x[i] <= vb.lower[i] && gi > 0.0 {
            zl[i] = gi;
            0.0
        } else if x[i] >= vb.upper[i] && gi < 0.0 {
            zu[i] = -gi;
            0.0
        } else {
            gi
        };
        res = res.max(r.abs());
    }
    (zl, zu, res)
}

#[derive(Clone)]
struct AugLag<'a> {
    nlp: &'a dyn Nlp,
    vb: Bounds,
    cb: Bounds,
    y: Vec<f64>,
    rho: f64,
    /// Zero during the feasibility phase.
    obj_weight: f64,
}

/// Outcome of an evaluation that may hit non-finite values.
enum Eval<T> {
    Ok(T),
    /// `None` marks the objective, `Some(i)` constraint `i`.
    Bad(Option<usize>),
}

impl AugLag<'_> {
    fn shifted(&self, g: &[f64]) -> Vec<f64> {
        // ŷ = ρ (g + y/ρ - P(g + y/ρ))
        g.iter()
            .enumerate()
            .map(|(i, &gi)| {
                let s = gi + self.y[i] / self.rho;
                self.rho * (s - project(s, self.cb.lower[i], self.cb.upper[i]))
            })
            .collect()
    }

    fn value(&self, x: &[f64]) -> Eval<(f64, f64, Vec<f64>)> {
        let f = self.nlp.objective(x);
        if !f.is_finite() {
            return Eval::Bad(None);
        }
        let mut g = vec![0.0; self.nlp.n_cons()];
        self.nlp.constraints(x, &mut g);
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Eval::Bad(Some(i));
        }
        let yhat = self.shifted(&g);
        let pen: f64 = yhat
            .iter()
            .zip(&self.y)
            .map(|(yh, y)| (yh * yh - y * y) / (2.0 * self.rho))
            .sum();
        Eval::Ok((self.obj_weight * f + pen, f, g))
    }
}

enum InnerEnd {
    Converged,
    Budget,
    Stalled,
    /// The violation left the allowed band; the penalty is too small.
    Diverged,
    Bad(Option<usize>),
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 50;
/// Violation a subproblem may reach from a nearly feasible start before the
/// penalty is judged too small.
const BAND: f64 = 1e-3;

/// Minimizes `f` subject to the constraints and variable bounds of `nlp`
/// starting from `x_init` (clipped into the box).
pub fn solve(nlp: &dyn Nlp, opts: &SolverOptions, x_init: &[f64]) -> Result<NlpSolution> {
    opts.validate()?;
    let (n, m) = (nlp.n_vars(), nlp.n_cons());
    if x_init.len() != n {
        return Err(Error::ShapeMismatch {
            context: "solve",
            expected: format!("{n} initial values"),
            got: x_init.len().to_string(),
        });
    }
    let vb = nlp.var_bounds();
    let cb = nlp.con_bounds();
    if vb.len() != n || cb.len() != m {
        return Err(Error::ShapeMismatch {
            context: "solve bounds",
            expected: format!("{n} variable and {m} constraint bounds"),
            got: format!("{} and {}", vb.len(), cb.len()),
        });
    }
    let mut x: Vec<f64> = (0..n).map(|i| project(x_init[i], vb.lower[i], vb.upper[i])).collect();
    let mut al = AugLag {
        nlp,
        vb: vb.clone(),
        cb: cb.clone(),
        y: vec![0.0; m],
        rho: 1.0,
        obj_weight: 1.0,
    };
    let failure = |x: Vec<f64>, iters, history, idx: Option<usize>| {
        let what = match idx {
            Some(i) => format!("constraint {i}"),
            None => "objective".to_string(),
        };
        NlpSolution {
            objective: f64::NAN,
            multipliers: Multipliers::zeros(n, m),
            status: SolveStatus::NumericalFailure,
            kkt: KktReport {
                stationarity: f64::NAN,
                feasibility: f64::NAN,
                complementarity: f64::NAN,
            },
            iterations: iters,
            history,
            failed_constraint: idx,
            message: format!("{what} evaluated to a non-finite value"),
            x,
        }
    };
    let (_, _, g0) = match al.value(&x) {
        Eval::Ok(v) => v,
        Eval::Bad(idx) => return Ok(failure(x, 0, Vec::new(), idx)),
    };
    let mut total = 0usize;
    let mut g0 = g0;
    if opts.feasibility_start && violation(&g0, &cb) > opts.tol_feas {
        // Restore feasibility first, then start from least-squares
        // multipliers, so a cheap objective cannot drag the first
        // subproblems far from the constraint manifold.
        let phase = AugLag { obj_weight: 0.0, ..al.clone() };
        let (end, iters) = minimize_subproblem(&phase, &mut x, 1e-2 * opts.tol_feas, opts.max_iter, f64::INFINITY);
        total += iters;
        if let InnerEnd::Bad(idx) = end {
            return Ok(failure(x, total, Vec::new(), idx));
        }
        nlp.constraints(&x, &mut g0);
        log::debug!("feasibility phase: {iters} iterations, violation {:.3e}", violation(&g0, &cb));
        if violation(&g0, &cb) <= opts.tol_feas {
            if let Some(mult) = least_squares_multipliers(nlp, &x, &g0, opts.tol_feas) {
                al.y = mult.signed().into_iter().map(|v| v.clamp(-opts.multiplier_max, opts.multiplier_max)).collect();
            }
        }
    }
    let mut prev_viol = violation(&g0, &cb);
    al.rho = opts.rho_init.unwrap_or_else(|| {
        let f0 = nlp.objective(&x);
        let c2: f64 = g0
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - project(v, cb.lower[i], cb.upper[i])).powi(2))
            .sum();
        (10.0 * f0.abs().max(1.0) / (0.5 * c2).max(1.0)).clamp(1e-8, 1e8)
    });
    let mut omega = 1e-1_f64.max(opts.tol_opt);
    let mut history = Vec::new();

    for outer in 0.. {
        let budget = opts.max_iter.saturating_sub(total);
        let start = x.clone();
        let cap = (10.0 * prev_viol).max(BAND).max(opts.tol_feas);
        let (end, iters) = minimize_subproblem(&al, &mut x, omega, budget, cap);
        total += iters;
        if let InnerEnd::Bad(idx) = end {
            return Ok(failure(x, total, history, idx));
        }
        if matches!(end, InnerEnd::Diverged) {
            // Retry the same subproblem from its start with a larger penalty.
            x.copy_from_slice(&start);
            al.rho *= opts.rho_factor;
            log::debug!("outer {outer}: violation left the band after {iters} iterations, rho -> {:.1e}", al.rho);
            if al.rho <= opts.rho_max && total < opts.max_iter {
                continue;
            }
        }
        let (f, g) = match al.value(&x) {
            Eval::Ok((_, f, g)) => (f, g),
            Eval::Bad(idx) => return Ok(failure(x, total, history, idx)),
        };
        let yhat: Vec<f64> = al
            .shifted(&g)
            .into_iter()
            .map(|v| v.clamp(-opts.multiplier_max, opts.multiplier_max))
            .collect();
        let viol = violation(&g, &cb);
        let mut grad = nlp.gradient(&x);
        nlp.jacobian(&x).tr_mul_vec_add(&yhat, &mut grad);
        let (zl, zu, _) = bound_multipliers(&x, &grad, &vb);
        let mut mult = Multipliers::from_signed(&yhat, zl, zu);
        let mut kkt = kkt_residual(nlp, &x, &mult)?;
        if viol <= opts.tol_feas && (kkt.stationarity > opts.tol_opt || kkt.complementarity > opts.tol_opt) {
            // Large penalties leave noisy first-order estimates; try the
            // least-squares multipliers of the active set instead.
            if let Some(m) = least_squares_multipliers(nlp, &x, &g, opts.tol_feas) {
                let k = kkt_residual(nlp, &x, &m)?;
                if k.stationarity.max(k.complementarity) < kkt.stationarity.max(kkt.complementarity) {
                    mult = m;
                    kkt = k;
                }
            }
        }
        history.push(OuterRecord {
            outer,
            inner_iterations: iters,
            rho: al.rho,
            violation: viol,
            stationarity: kkt.stationarity,
            objective: f,
        });
        if opts.verbose {
            log::info!(
                "outer {outer}: f = {f:.10e}, viol = {viol:.3e}, stat = {:.3e}, rho = {:.1e}, inner = {iters}",
                kkt.stationarity,
                al.rho
            );
        }
        let done = |status, message: String| NlpSolution {
            x: x.clone(),
            objective: f,
            multipliers: mult.clone(),
            status,
            kkt,
            iterations: total,
            history: history.clone(),
            failed_constraint: None,
            message,
        };
        if viol <= opts.tol_feas && kkt.stationarity <= opts.tol_opt && kkt.complementarity <= opts.tol_opt {
            return Ok(done(SolveStatus::Optimal, "converged".into()));
        }
        if total >= opts.max_iter {
            return Ok(done(SolveStatus::MaxIter, format!("iteration limit {} reached", opts.max_iter)));
        }
        if matches!(end, InnerEnd::Stalled) && viol <= opts.tol_feas && omega <= opts.tol_opt {
            return Ok(done(
                SolveStatus::NumericalFailure,
                "line search stalled before reaching the optimality tolerance".into(),
            ));
        }
        al.y = yhat;
        if viol > opts.tol_feas && viol > opts.feas_decrease * prev_viol {
            al.rho *= opts.rho_factor;
            if al.rho > opts.rho_max {
                return Ok(done(
                    SolveStatus::Infeasible,
                    format!("penalty exceeded {:e} with violation {viol:.3e}", opts.rho_max),
                ));
            }
        }
        prev_viol = viol;
        omega = (0.1 * omega).max(opts.tol_opt);
    }
    unreachable!()
}

/// Multipliers minimizing the Lagrangian gradient over the constraints and
/// bounds active within `tol` at `x`, with wrong-signed entries removed.
fn least_squares_multipliers(nlp: &dyn Nlp, x: &[f64], g: &[f64], tol: f64) -> Option<Multipliers> {
    let (n, m) = (x.len(), g.len());
    let (vb, cb) = (nlp.var_bounds(), nlp.con_bounds());
    let jac = nlp.jacobian(x).to_dense();
    let grad = DVector::from_vec(nlp.gradient(x));
    // Columns: (kind, index, sign) with kind 0 = constraint, 1 = variable.
    // sign 0 = free (equality), +1 = upper side, -1 = lower side.
    let mut cols: Vec<(u8, usize, i8)> = Vec::new();
    for i in 0..m {
        if cb.lower[i] == cb.upper[i] {
            cols.push((0, i, 0));
        } else if g[i] - cb.lower[i] <= tol {
            cols.push((0, i, -1));
        } else if cb.upper[i] - g[i] <= tol {
            cols.push((0, i, 1));
        }
    }
    for j in 0..n {
        if x[j] <= vb.lower[j] {
            cols.push((1, j, -1));
        } else if x[j] >= vb.upper[j] {
            cols.push((1, j, 1));
        }
    }
    for _ in 0..5 {
        if cols.is_empty() {
            return None;
        }
        let a = DMatrix::from_fn(n, cols.len(), |r, c| match cols[c] {
            (0, i, _) => jac[(i, r)],
            (_, j, sign) => {
                if j == r {
                    f64::from(sign)
                } else {
                    0.0
                }
            }
        });
        let w = a.svd(true, true).solve(&(-&grad), 1e-12).ok()?;
        // A lower-side multiplier enters with coefficient -1 and must be >= 0;
        // store signed values so the sign test is uniform.
        let bad: Vec<usize> = (0..cols.len())
            .filter(|&c| {
                let (kind, _, sign) = cols[c];
                match (kind, sign) {
                    (_, 0) => false,
                    (0, s) => w[c] * f64::from(s) < 0.0,
                    _ => w[c] < 0.0,
                }
            })
            .collect();
        if bad.is_empty() {
            let mut out = Multipliers::zeros(n, m);
            for (c, &(kind, i, sign)) in cols.iter().enumerate() {
                match (kind, sign) {
                    (0, 0) => {
                        if w[c] >= 0.0 {
                            out.con_upper[i] = w[c];
                        } else {
                            out.con_lower[i] = -w[c];
                        }
                    }
                    (0, 1) => out.con_upper[i] = w[c],
                    (0, _) => out.con_lower[i] = -w[c],
                    (_, 1) => out.var_upper[i] = w[c],
                    _ => out.var_lower[i] = w[c],
                }
            }
            return Some(out);
        }
        let drop: std::collections::HashSet<usize> = bad.into_iter().collect();
        cols = cols.into_iter().enumerate().filter(|(c, _)| !drop.contains(c)).map(|(_, v)| v).collect();
    }
    None
}

/// Newton iterations on the augmented Lagrangian until the projected
/// gradient drops below `omega`. Returns early with `Diverged` once the
/// violation exceeds `viol_cap`.
fn minimize_subproblem(
    al: &AugLag<'_>,
    x: &mut [f64],
    omega: f64,
    budget: usize,
    viol_cap: f64,
) -> (InnerEnd, usize) {
    let n = x.len();
    let vb = &al.vb;
    let mut iters = 0;
    let mut flat = 0;
    let mut last = f64::INFINITY;
    let mut last_shift = 0.0;
    loop {
        let (lval, _, g) = match al.value(x) {
            Eval::Ok(v) => v,
            Eval::Bad(idx) => return (InnerEnd::Bad(idx), iters),
        };
        if violation(&g, &al.cb) > viol_cap {
            return (InnerEnd::Diverged, iters);
        }
        let yhat = al.shifted(&g);
        let jac = al.nlp.jacobian(x);
        let mut grad = al.nlp.gradient(x);
        grad.iter_mut().for_each(|v| *v *= al.obj_weight);
        jac.tr_mul_vec_add(&yhat, &mut grad);
        if let Some(_i) = grad.iter().position(|v| !v.is_finite()) {
            return (InnerEnd::Bad(None), iters);
        }
        let (_, _, measure) = bound_multipliers(x, &grad, vb);
        if measure <= omega {
            return (InnerEnd::Converged, iters);
        }
        if iters >= budget {
            return (InnerEnd::Budget, iters);
        }
        // Rounding noise in the penalty term can keep the measure above
        // `omega` without any further decrease.
        flat = if last - lval <= 1e-15 * lval.abs().max(1.0) { flat + 1 } else { 0 };
        if flat >= 5 {
            return (InnerEnd::Stalled, iters);
        }
        last = lval;
        iters += 1;

        let mut h = al.nlp.hessian(x, al.obj_weight, &yhat);
        let curvature = h.amax().max(1.0);
        let mut gram_scale = vec![0.0; g.len()];
        for i in 0..g.len() {
            let s = g[i] + al.y[i] / al.rho;
            let eq = al.cb.lower[i] == al.cb.upper[i];
            if eq || s < al.cb.lower[i] || s > al.cb.upper[i] {
                gram_scale[i] = al.rho;
            }
        }
        jac.add_scaled_gram(&gram_scale, &mut h);
        if h.iter().any(|v| !v.is_finite()) {
            return (InnerEnd::Bad(None), iters);
        }
        let lo: Vec<f64> = (0..n).map(|i| vb.lower[i] - x[i]).collect();
        let hi: Vec<f64> = (0..n).map(|i| vb.upper[i] - x[i]).collect();
        let eps = measure.min(1e-3);
        // Curvature along variables held at a bound does not affect the
        // step, so only the free block has to be made positive definite.
        let free: Vec<usize> = (0..n)
            .filter(|&i| !(-lo[i] <= eps && grad[i] > 0.0) && !(hi[i] <= eps && grad[i] < 0.0))
            .collect();
        let mut hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let shift = make_positive_definite(&mut hf, curvature, last_shift);
        last_shift = shift;
        for i in 0..n {
            h[(i, i)] += shift;
        }
        let d = box_qp_step(&h, &grad, &lo, &hi, eps);

        let qp_ok = d.is_some();
        let accepted = d
            .as_ref()
            .and_then(|d| arc_search(al, x, d, &grad, lval).map(|a| (a, "qp")))
            .or_else(|| {
                let d = projected_newton_direction(&h, &grad, &lo, &hi, eps)?;
                arc_search(al, x, &d, &grad, lval).map(|a| (a, "projected"))
            })
            .or_else(|| {
                // Fall back to a scaled projected gradient step.
                let scale = 1.0 / inf_norm(&grad).max(1.0);
                let sd: Vec<f64> = grad.iter().map(|g| -g * scale).collect();
                arc_search(al, x, &sd, &grad, lval).map(|a| (a, "gradient"))
            });
        log::trace!(
            "inner {iters}: L = {lval:.12e}, measure = {measure:.3e}, shift = {shift:.2e}, qp = {qp_ok}, step = {:?}",
            accepted.as_ref().map(|((_, a), k)| (*k, *a))
        );
        match accepted {
            Some(((xn, _), _)) => x.copy_from_slice(&xn),
            None => return (InnerEnd::Stalled, iters),
        }
    }
}

/// Armijo backtracking along the projection arc; returns the accepted
/// point and step length.
fn arc_search(al: &AugLag<'_>, x: &[f64], d: &[f64], grad: &[f64], lval: f64) -> Option<(Vec<f64>, f64)> {
    let vb = &al.vb;
    let mut alpha = 1.0;
    let mut trial = vec![0.0; x.len()];
    for _ in 0..MAX_BACKTRACK {
        for i in 0..x.len() {
            trial[i] = project(x[i] + alpha * d[i], vb.lower[i], vb.upper[i]);
        }
        let decrease: f64 = grad.iter().zip(trial.iter().zip(x)).map(|(g, (t, x0))| g * (t - x0)).sum();
        if decrease >= 0.0 {
            if trial.iter().zip(x).all(|(a, b)| a == b) {
                return None;
            }
        } else if let Eval::Ok((v, _, _)) = al.value(&trial) {
            if v <= lval + ARMIJO * decrease {
                return Some((trial, alpha));
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Bertsekas' projected Newton direction: a diagonally scaled gradient step
/// on the `eps`-active bounds and a Newton step on the rest.
fn projected_newton_direction(h: &DMatrix<f64>, g: &[f64], lo: &[f64], hi: &[f64], eps: f64) -> Option<Vec<f64>> {
    let n = g.len();
    let active: Vec<bool> = (0..n)
        .map(|i| (-lo[i] <= eps && g[i] > 0.0) || (hi[i] <= eps && g[i] < 0.0))
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
    let mut d: Vec<f64> = (0..n)
        .map(|i| if active[i] { -g[i] / h[(i, i)].max(1e-8) } else { 0.0 })
        .collect();
    if !free.is_empty() {
        let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| g[i]));
        let step = Cholesky::new(hf)?.solve(&gf);
        for (k, &i) in free.iter().enumerate() {
            d[i] = -step[k];
        }
    }
    Some(d)
}

/// Adds a shift `δI` that makes `h` numerically positive definite and
/// returns `δ`. After `δ = 0` fails, the ladder starts at a quarter of the
/// previous shift (or `1e-10·scale`) and grows by 4. `scale` should reflect
/// the Lagrangian curvature, not the penalty term.
fn make_positive_definite(h: &mut DMatrix<f64>, scale: f64, previous: f64) -> f64 {
    let n = h.nrows();
    let mut delta = 0.0;
    let first = (0.25 * previous).max(1e-10 * scale);
    for _ in 0..80 {
        if Cholesky::new(h.clone()).is_some() {
            return delta;
        }
        let next = if delta == 0.0 { first } else { delta * 4.0 };
        for i in 0..n {
            h[(i, i)] += next - delta;
        }
        delta = next;
    }
    delta
}

/// Minimizes `½dᵀHd + gᵀd` over `lo ≤ d ≤ hi` for positive definite `H` by
/// a primal-dual active-set iteration. Variables within `eps` of a bound
/// with the gradient pushing outward start active. Returns `None` if the
/// active set does not settle.
fn box_qp_step(h: &DMatrix<f64>, g: &[f64], lo: &[f64], hi: &[f64], eps: f64) -> Option<Vec<f64>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Side {
        Free,
        Lower,
        Upper,
    }
    let n = g.len();
    let mut side: Vec<Side> = (0..n)
        .map(|i| {
            if -lo[i] <= eps && g[i] > 0.0 {
                Side::Lower
            } else if hi[i] <= eps && g[i] < 0.0 {
                Side::Upper
            } else {
                Side::Free
            }
        })
        .collect();
    for _ in 0..30 {
        let mut d: Vec<f64> = (0..n)
            .map(|i| match side[i] {
                Side::Lower => lo[i],
                Side::Upper => hi[i],
                Side::Free => 0.0,
            })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| side[i] == Side::Free).collect();
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let rhs = DVector::from_iterator(
                free.len(),
                free.iter().map(|&i| {
                    let mut r = -g[i];
                    for j in 0..n {
                        if side[j] != Side::Free {
                            r -= h[(i, j)] * d[j];
                        }
                    }
                    r
                }),
            );
            let sol = Cholesky::new(hf)?.solve(&rhs);
            for (k, &i) in free.iter().enumerate() {
                d[i] = sol[k];
            }
        }
        let dv = DVector::from_column_slice(&d);
        let lam = h * &dv;
        let mut changed = false;
        for i in 0..n {
            let li = lam[i] + g[i];
            let tol_l = 1e-13 * (g[i].abs() + h[(i, i)] * d[i].abs()).max(1e-300);
            let tol_d = 1e-13 * d[i].abs().max(lo[i].abs().min(hi[i].abs())).max(1e-300);
            let next = match side[i] {
                Side::Lower if li < -tol_l => Side::Free,
                Side::Upper if li > tol_l => Side::Free,
                Side::Free if d[i] < lo[i] - tol_d => Side::Lower,
                Side::Free if d[i] > hi[i] + tol_d => Side::Upper,
                s => s,
            };
            if next != side[i] {
                side[i] = next;
                changed = true;
            }
        }
        if !changed {
            for i in 0..n {
                d[i] = d[i].clamp(lo[i], hi[i]);
            }
            return Some(d);
        }
    }
    None
}
