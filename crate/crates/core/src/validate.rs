//! Independent checks of collocation solutions: propagation of the
//! dynamics through the interpolated control, and the linear ODE solve in
//! Birkhoff and Lagrange form.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birkhoff::{build_birkhoff, BirkhoffCase};
use crate::conditioning::cond2;
use crate::error::{invalid, Error, Result};
use crate::grid::{affine_time, canonical_time, Grid};
use crate::interp::{build_basis, diff_matrix, interpolate_with, ControlInterpolation, LagrangeBasis};
use crate::ocp::{OcpProblem, Trajectory};
use crate::ode::{self, IntegratorStats};

pub const DEFAULT_RTOL: f64 = 1e-10;
pub const DEFAULT_ATOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    /// Dense physical times, `10(N+1)` points spanning `[t0, tf]`.
    pub times: Vec<f64>,
    /// Collocation state interpolant at `times`.
    pub ps_states: Vec<Vec<f64>>,
    pub propagated: Vec<Vec<f64>>,
    /// `propagated - ps_states`.
    pub errors: Vec<Vec<f64>>,
    /// Signed violation of each endpoint constraint at the propagated
    /// final state, zero where the bounds hold.
    pub terminal_error: Vec<f64>,
    pub stats: IntegratorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityError {
    /// `max_t |error|` per state.
    pub per_state: Vec<f64>,
    /// `‖terminal_error‖_∞`.
    pub terminal_miss: f64,
}

/// Integrates the dynamics from the trajectory's initial state through the
/// Lagrange interpolant of its controls.
pub fn propagate(prob: &dyn OcpProblem, traj: &Trajectory, rtol: f64, atol: f64) -> Result<PropagationReport> {
    propagate_with(prob, traj, rtol, atol, ControlInterpolation::Lagrange)
}

pub fn propagate_with(
    prob: &dyn OcpProblem,
    traj: &Trajectory,
    rtol: f64,
    atol: f64,
    rule: ControlInterpolation,
) -> Result<PropagationReport> {
    let (nx, nu) = (prob.nx(), prob.nu());
    let n = traj.grid.order();
    if traj.x.len() != n + 1 || traj.u.len() != n + 1 {
        return Err(Error::ShapeMismatch {
            context: "propagate",
            expected: format!("{} node rows", n + 1),
            got: format!("{} states, {} controls", traj.x.len(), traj.u.len()),
        });
    }
    if traj.x.iter().any(|r| r.len() != nx) || traj.u.iter().any(|r| r.len() != nu) {
        return Err(Error::ShapeMismatch {
            context: "propagate",
            expected: format!("{nx} states and {nu} controls per node"),
            got: "rows of another width".into(),
        });
    }
    if !(traj.tf > traj.t0) {
        return Err(invalid("tf", format!("final time {} must exceed t0 = {}", traj.tf, traj.t0)));
    }
    let basis = build_basis(&traj.grid)?;
    let ucols: Vec<Vec<f64>> = (0..nu).map(|i| traj.control_column(i)).collect();
    let xcols: Vec<Vec<f64>> = (0..nx).map(|i| traj.state_column(i)).collect();
    let (t0, tf) = (traj.t0, traj.tf);
    let control = |t: f64| -> Result<Vec<f64>> {
        let tau = canonical_time(t, t0, tf).clamp(-1.0, 1.0);
        ucols
            .iter()
            .map(|c| Ok(interpolate_with(rule, &basis, c, &[tau])?[0]))
            .collect()
    };

    let m = 10 * (n + 1);
    let times: Vec<f64> = (0..m)
        .map(|k| if k + 1 == m { tf } else { t0 + (tf - t0) * k as f64 / (m - 1) as f64 })
        .collect();
    let mut bad = None;
    let mut uk = vec![0.0; nu];
    let sol = ode::integrate(
        |t, x, dx| match control(t) {
            Ok(u) => {
                uk.copy_from_slice(&u);
                prob.dynamics(x, &uk, t, dx);
            }
            Err(e) => {
                bad.get_or_insert(e);
                dx.fill(f64::NAN);
            }
        },
        &traj.x[0],
        &times,
        rtol,
        atol,
    );
    if let Some(e) = bad {
        return Err(e);
    }
    let sol = sol?;
    let ps_states = ps_interpolant(&basis, &xcols, &times, t0, tf)?;
    let errors = sol
        .states
        .iter()
        .zip(&ps_states)
        .map(|(p, s)| p.iter().zip(s).map(|(a, b)| a - b).collect())
        .collect();

    let xf = &sol.states[m - 1];
    let ne = prob.n_endpoint();
    let mut e = vec![0.0; ne];
    prob.endpoint_fn(&traj.x[0], xf, t0, tf, &mut e);
    let eb = prob.endpoint_bounds();
    let terminal_error = (0..ne)
        .map(|i| {
            if e[i] < eb.lower[i] {
                e[i] - eb.lower[i]
            } else if e[i] > eb.upper[i] {
                e[i] - eb.upper[i]
            } else {
                0.0
            }
        })
        .collect();
    Ok(PropagationReport {
        times,
        ps_states,
        propagated: sol.states,
        errors,
        terminal_error,
        stats: sol.stats,
    })
}

fn ps_interpolant(basis: &LagrangeBasis, cols: &[Vec<f64>], times: &[f64], t0: f64, tf: f64) -> Result<Vec<Vec<f64>>> {
    let nodal = basis.nodal();
    times
        .par_iter()
        .map(|&t| {
            let tau = canonical_time(t, t0, tf).clamp(-1.0, 1.0);
            Ok(cols.iter().map(|c| nodal.eval(c, tau)).collect())
        })
        .collect()
}

pub fn feasibility_error(report: &PropagationReport) -> FeasibilityError {
    let nx = report.errors.first().map_or(0, Vec::len);
    let per_state = (0..nx)
        .map(|i| report.errors.iter().fold(0.0_f64, |m, r| m.max(r[i].abs())))
        .collect();
    let terminal_miss = report.terminal_error.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    FeasibilityError { per_state, terminal_miss }
}

/// Which discretization of `ẋ = Λx + g` to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearForm {
    /// `X_a = 1·x0 + B_a (Λ X_a + g_a)`.
    #[default]
    Birkhoff,
    /// `D_a X_a + l_0 x0 = Λ X_a + g_a`.
    Lagrange,
}

/// Node values of `dx/dτ = Λx + g(τ)`, `x(τ_0) = x0`, on a Lobatto grid.
/// Row `k` of the result is the state at node `k`.
pub fn solve_linear_ode<G>(grid: &Grid, lambda: &DMatrix<f64>, forcing: G, x0: &[f64], form: LinearForm) -> Result<DMatrix<f64>>
where
    G: Fn(f64) -> Vec<f64>,
{
    if !grid.kind().is_lobatto() {
        return Err(Error::UnsupportedGrid {
            what: "linear ODE solve",
            grid: grid.kind().to_string(),
            reason: "both endpoints must be nodes",
        });
    }
    let nx = x0.len();
    if lambda.nrows() != nx || lambda.ncols() != nx {
        return Err(Error::ShapeMismatch {
            context: "solve_linear_ode",
            expected: format!("{nx}x{nx} system matrix"),
            got: format!("{}x{}", lambda.nrows(), lambda.ncols()),
        });
    }
    if lambda.iter().chain(x0).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("system matrix or initial state".into()));
    }
    let n = grid.order();
    if n < 1 {
        return Err(invalid("N", "the grid needs at least two nodes"));
    }
    let nodes = grid.nodes();
    let g: Vec<Vec<f64>> = nodes[1..].iter().map(|&t| forcing(t)).collect();
    if let Some(k) = g.iter().position(|r| r.len() != nx || r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("forcing at node {}", k + 1)));
    }
    let basis = build_basis(grid)?;
    let size = n * nx;
    let mut m = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    match form {
        LinearForm::Birkhoff => {
            let b = build_birkhoff(&basis, BirkhoffCase::A)?.b;
            for k in 0..n {
                for i in 0..nx {
                    let r = k * nx + i;
                    m[(r, r)] += 1.0;
                    let mut acc = x0[i];
                    for j in 0..n {
                        let bkj = b[(k, j)];
                        acc += bkj * g[j][i];
                        for l in 0..nx {
                            m[(r, j * nx + l)] -= bkj * lambda[(i, l)];
                        }
                    }
                    rhs[r] = acc;
                }
            }
        }
        LinearForm::Lagrange => {
            let ops = diff_matrix(&basis);
            for k in 0..n {
                for i in 0..nx {
                    let r = k * nx + i;
                    for j in 0..n {
                        m[(r, j * nx + i)] += ops.da[(k, j)];
                    }
                    for l in 0..nx {
                        m[(r, k * nx + l)] -= lambda[(i, l)];
                    }
                    rhs[r] = g[k][i] - ops.l0[k] * x0[i];
                }
            }
        }
    }
    let sol = m.clone().lu().solve(&rhs).filter(|s| s.iter().all(|v| v.is_finite()));
    let Some(sol) = sol else {
        // A zero matrix has no finite estimate; report it as infinite.
        let cond = match cond2(&m) {
            Ok(c) => c,
            Err(Error::SingularSystem { cond }) => cond,
            Err(_) => f64::INFINITY,
        };
        return Err(Error::SingularSystem { cond });
    };
    Ok(DMatrix::from_fn(n + 1, nx, |k, i| if k == 0 { x0[i] } else { sol[(k - 1) * nx + i] }))
}

/// Physical node times of a grid mapped onto `[t0, tf]`.
pub fn node_times(grid: &Grid, t0: f64, tf: f64) -> Vec<f64> {
    grid.nodes().iter().map(|&tau| affine_time(tau, t0, tf)).collect()
}
