//! Solving on an increasing ladder of orders with warm starts and a
//! Chebyshev-tail stopping rule. Single segment, no knots.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridKind};
use crate::interp::{build_basis, interpolate, modal_coefficients};
use crate::nlpsolve::{kkt_residual, solve, KktReport, Multipliers, SolveStatus, SolverOptions};
use crate::ocp::{OcpProblem, Trajectory};
use crate::transcribe::{transcribe, MethodVariant, Transcription};

/// Fraction of trailing coefficients inspected by the stopping rule.
pub const TAIL_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementPlan {
    /// Strictly increasing orders.
    pub ladder: Vec<usize>,
    /// Stop once every state and control tail ratio is at most this.
    pub eps_tail: f64,
    /// Upper limit on the number of rungs attempted.
    pub max_steps: usize,
}

impl RefinementPlan {
    pub fn new(ladder: Vec<usize>, eps_tail: f64) -> Result<Self> {
        let max_steps = ladder.len();
        let plan = RefinementPlan {
            ladder,
            eps_tail,
            max_steps,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(invalid("ladder", "needs at least one order"));
        }
        if self.ladder[0] < 1 {
            return Err(invalid("ladder", "orders must be at least 1"));
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("ladder", format!("must be strictly increasing, got {:?}", self.ladder)));
        }
        if !(self.eps_tail > 0.0) || !self.eps_tail.is_finite() {
            return Err(invalid("eps_tail", format!("must be positive and finite, got {}", self.eps_tail)));
        }
        if self.max_steps < 1 {
            return Err(invalid("max_steps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Diagnostics of one rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungReport {
    pub order: usize,
    pub status: SolveStatus,
    pub objective: f64,
    /// Constraint violation at the returned point.
    pub feasibility: f64,
    pub kkt: KktReport,
    /// Violation of the starting point handed to the solver.
    pub start_feasibility: f64,
    /// Tail ratio per state component, then per control component.
    pub tail_ratios: Vec<f64>,
    pub iterations: usize,
    pub warm_started: bool,
}

impl RungReport {
    pub fn max_tail_ratio(&self) -> f64 {
        self.tail_ratios.iter().fold(0.0_f64, |m, &r| m.max(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefinementOutcome {
    /// The tail criterion held at the last rung.
    Converged,
    /// Every rung solved but the tails never dropped below the threshold.
    LadderExhausted,
    /// A rung's solve did not reach optimality; the result is the last
    /// successful rung, or the failed one when no rung succeeded.
    Failed { rung: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub trajectory: Trajectory,
    pub rungs: Vec<RungReport>,
    /// Index into `rungs` of the returned trajectory.
    pub selected: usize,
    pub outcome: RefinementOutcome,
}

pub fn refine_solve(prob: &dyn OcpProblem, plan: &RefinementPlan, variant: MethodVariant) -> Result<Refinement> {
    refine_solve_with(prob, plan, variant, &SolverOptions::default())
}

/// Runs the ladder on CGL grids. Each rung after the first starts from the
/// previous rung's states and controls interpolated onto the finer nodes,
/// with `V` rebuilt from the dynamics.
pub fn refine_solve_with(
    prob: &dyn OcpProblem,
    plan: &RefinementPlan,
    variant: MethodVariant,
    opts: &SolverOptions,
) -> Result<Refinement> {
    plan.validate()?;
    opts.validate()?;
    let mut rungs: Vec<RungReport> = Vec::new();
    let mut best: Option<(usize, Trajectory)> = None;
    for &order in plan.ladder.iter().take(plan.max_steps) {
        let grid = Grid::new(GridKind::Cgl, order)?;
        let t = transcribe(prob, &grid, variant)?;
        let z0 = match &best {
            Some((_, prev)) => warm_start(&t, prev)?,
            None => t.initial_point()?,
        };
        let start_feasibility = violation_of(&t, &z0)?;
        let sol = solve(&t, opts, &z0)?;
        let traj = t.extract_trajectory(&sol.x)?;
        let tail_ratios = (0..prob.nx())
            .map(|i| traj.state_column(i))
            .chain((0..prob.nu()).map(|j| traj.control_column(j)))
            .map(|col| modal_coefficients(&grid, &col).map(|c| c.tail_ratio(TAIL_FRACTION)))
            .collect::<Result<Vec<_>>>()?;
        let rung = rungs.len();
        let report = RungReport {
            order,
            status: sol.status,
            objective: sol.objective,
            feasibility: sol.kkt.feasibility,
            kkt: sol.kkt,
            start_feasibility,
            tail_ratios,
            iterations: sol.iterations,
            warm_started: best.is_some(),
        };
        log::info!(
            "rung {rung} (N = {order}): {:?}, objective {:.10e}, tail {:.3e}",
            report.status,
            report.objective,
            report.max_tail_ratio()
        );
        let converged = report.tail_ratios.iter().all(|&r| r <= plan.eps_tail);
        let ok = report.status == SolveStatus::Optimal;
        rungs.push(report);
        if !ok {
            let outcome = RefinementOutcome::Failed { rung };
            return Ok(match best {
                Some((selected, trajectory)) => Refinement {
                    trajectory,
                    rungs,
                    selected,
                    outcome,
                },
                None => Refinement {
                    trajectory: traj,
                    rungs,
                    selected: rung,
                    outcome,
                },
            });
        }
        best = Some((rung, traj));
        if converged {
            break;
        }
    }
    let (selected, trajectory) = best.expect("at least one rung ran");
    let outcome = if rungs[selected].tail_ratios.iter().all(|&r| r <= plan.eps_tail) {
        RefinementOutcome::Converged
    } else {
        RefinementOutcome::LadderExhausted
    };
    Ok(Refinement {
        trajectory,
        rungs,
        selected,
        outcome,
    })
}

/// Decision vector on `t`'s grid interpolated from a coarser trajectory.
pub fn warm_start(t: &Transcription, prev: &Trajectory) -> Result<Vec<f64>> {
    let basis = build_basis(&prev.grid)?;
    let nodes = t.grid().nodes();
    let resample = |rows: &[Vec<f64>], width: usize| -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(nodes.len(), width);
        for i in 0..width {
            let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
            for (k, v) in interpolate(&basis, &col, nodes)?.into_iter().enumerate() {
                out[(k, i)] = v;
            }
        }
        Ok(out)
    };
    let prob = t.problem();
    if prev.x.first().map_or(0, |r| r.len()) != prob.nx() || prev.u.first().map_or(0, |r| r.len()) != prob.nu() {
        return Err(Error::ShapeMismatch {
            context: "warm_start",
            expected: format!("{} states and {} controls", prob.nx(), prob.nu()),
            got: "a trajectory of another problem".to_string(),
        });
    }
    let x = resample(&prev.x, prob.nx())?;
    let u = resample(&prev.u, prob.nu())?;
    t.point_from_samples(&x, &u, prev.tf)
}

fn violation_of(t: &Transcription, z: &[f64]) -> Result<f64> {
    use crate::nlpsolve::Nlp;
    Ok(kkt_residual(t, z, &Multipliers::zeros(t.n_vars(), t.n_cons()))?.feasibility)
}
