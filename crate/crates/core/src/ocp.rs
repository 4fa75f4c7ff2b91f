//! Continuous-time optimal control problems and the built-in examples.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fd;
use crate::grid::Grid;
use crate::ode;

/// Componentwise bounds `lower ≤ v ≤ upper`; infinite entries are allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Bounds { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds::new(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    pub fn equal(values: Vec<f64>) -> Self {
        Bounds::new(values.clone(), values)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    fn check(&self, name: &'static str, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::ShapeMismatch {
                context: name,
                expected: format!("{n} bounds"),
                got: format!("{}/{}", self.lower.len(), self.upper.len()),
            });
        }
        for i in 0..n {
            if self.lower[i].is_nan() || self.upper[i].is_nan() || self.lower[i] > self.upper[i] {
                return Err(invalid(name, format!("bound {i} has lower > upper or NaN")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TimeSpec {
    Fixed { t0: f64, tf: f64 },
    FreeFinal { t0: f64, tf_min: f64, tf_max: f64, tf_guess: f64 },
}

impl TimeSpec {
    pub fn t0(&self) -> f64 {
        match *self {
            TimeSpec::Fixed { t0, .. } | TimeSpec::FreeFinal { t0, .. } => t0,
        }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, TimeSpec::FreeFinal { .. })
    }

    pub fn tf_guess(&self) -> f64 {
        match *self {
            TimeSpec::Fixed { tf, .. } => tf,
            TimeSpec::FreeFinal { tf_guess, .. } => tf_guess,
        }
    }
}

/// Node-sampled starting point for a transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialGuess {
    /// `(N+1) × nx`.
    pub x: DMatrix<f64>,
    /// `(N+1) × nu`.
    pub u: DMatrix<f64>,
    pub tf: f64,
}

/// Optimal control problem: minimize `E(x0, xf, t0, tf) + ∫ F dt` subject to
/// `x' = f(x, u, t)`, endpoint bounds on `e`, path bounds on `h` and box
/// bounds on states and controls.
///
/// Evaluators must be pure so that collocation nodes can be evaluated in any
/// order or concurrently.
pub trait OcpProblem: Send + Sync {
    fn name(&self) -> &str;
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;

    fn dynamics(&self, x: &[f64], u: &[f64], t: f64, out: &mut [f64]);

    /// Analytic `(∂f/∂x, ∂f/∂u)`, if available.
    fn dynamics_jacobian(&self, _x: &[f64], _u: &[f64], _t: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    fn endpoint_cost(&self, x0: &[f64], xf: &[f64], t0: f64, tf: f64) -> f64;

    fn has_running_cost(&self) -> bool {
        false
    }

    fn running_cost(&self, _x: &[f64], _u: &[f64], _t: f64) -> f64 {
        0.0
    }

    fn n_endpoint(&self) -> usize;
    fn endpoint_fn(&self, x0: &[f64], xf: &[f64], t0: f64, tf: f64, out: &mut [f64]);
    fn endpoint_bounds(&self) -> Bounds;

    fn n_path(&self) -> usize {
        0
    }

    fn path_fn(&self, _x: &[f64], _u: &[f64], _t: f64, _out: &mut [f64]) {}

    fn path_bounds(&self) -> Bounds {
        Bounds::unbounded(0)
    }

    fn state_bounds(&self) -> Bounds {
        Bounds::unbounded(self.nx())
    }

    fn control_bounds(&self) -> Bounds {
        Bounds::unbounded(self.nu())
    }

    fn time_spec(&self) -> TimeSpec;

    /// Starting point on canonical nodes `tau`. The default holds states
    /// and controls at zero, clipped into their boxes.
    fn initial_guess(&self, tau: &[f64]) -> InitialGuess {
        let n = tau.len();
        let clip = |b: &Bounds, i: usize| 0.0_f64.clamp(b.lower[i], b.upper[i]);
        let (xb, ub) = (self.state_bounds(), self.control_bounds());
        InitialGuess {
            x: DMatrix::from_fn(n, self.nx(), |_, i| clip(&xb, i)),
            u: DMatrix::from_fn(n, self.nu(), |_, i| clip(&ub, i)),
            tf: self.time_spec().tf_guess(),
        }
    }
}

/// `(∂f/∂x, ∂f/∂u)` from the analytic hook or central differences.
pub fn dynamics_jacobian(prob: &dyn OcpProblem, x: &[f64], u: &[f64], t: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    if let Some(j) = prob.dynamics_jacobian(x, u, t) {
        return j;
    }
    let (nx, nu) = (prob.nx(), prob.nu());
    let z: Vec<f64> = x.iter().chain(u).copied().collect();
    let j = fd::jacobian(&z, nx, |z, out| prob.dynamics(&z[..nx], &z[nx..], t, out));
    (
        j.view((0, 0), (nx, nx)).into_owned(),
        j.view((0, nx), (nx, nu)).into_owned(),
    )
}

/// Checks bounds and evaluator output sizes on `samples` random admissible
/// points drawn from a seeded generator.
pub fn validate_problem(prob: &dyn OcpProblem, samples: usize, seed: u64) -> Result<()> {
    let (nx, nu, ne, nh) = (prob.nx(), prob.nu(), prob.n_endpoint(), prob.n_path());
    if nx == 0 {
        return Err(invalid("nx", "problem needs at least one state"));
    }
    let (xb, ub) = (prob.state_bounds(), prob.control_bounds());
    xb.check("state bounds", nx)?;
    ub.check("control bounds", nu)?;
    prob.endpoint_bounds().check("endpoint bounds", ne)?;
    prob.path_bounds().check("path bounds", nh)?;
    let ts = prob.time_spec();
    match ts {
        TimeSpec::Fixed { t0, tf } => {
            if !t0.is_finite() || !tf.is_finite() || tf <= t0 {
                return Err(invalid("tf", format!("need finite t0 < tf, got {t0}, {tf}")));
            }
        }
        TimeSpec::FreeFinal { t0, tf_min, tf_max, tf_guess } => {
            if !t0.is_finite() || !(tf_min > t0) || !(tf_max >= tf_min) || !tf_max.is_finite() {
                return Err(invalid("tf", "free final time needs t0 < tf_min ≤ tf_max < ∞"));
            }
            if !(tf_min..=tf_max).contains(&tf_guess) {
                return Err(invalid("tf_guess", "guess outside [tf_min, tf_max]"));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |b: &Bounds, i: usize, rng: &mut ChaCha8Rng| {
        let lo = if b.lower[i].is_finite() { b.lower[i] } else { b.upper[i].min(10.0) - 20.0 };
        let hi = if b.upper[i].is_finite() { b.upper[i] } else { lo + 20.0 };
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let t0 = ts.t0();
    let tf = ts.tf_guess();
    for _ in 0..samples {
        let x: Vec<f64> = (0..nx).map(|i| draw(&xb, i, &mut rng)).collect();
        let xf: Vec<f64> = (0..nx).map(|i| draw(&xb, i, &mut rng)).collect();
        let u: Vec<f64> = (0..nu).map(|i| draw(&ub, i, &mut rng)).collect();
        let t = rng.random_range(t0..=tf);
        let mut dx = vec![f64::NAN; nx];
        prob.dynamics(&x, &u, t, &mut dx);
        finite("dynamics", &dx)?;
        let mut e = vec![f64::NAN; ne];
        prob.endpoint_fn(&x, &xf, t0, tf, &mut e);
        finite("endpoint function", &e)?;
        let mut h = vec![f64::NAN; nh];
        prob.path_fn(&x, &u, t, &mut h);
        finite("path function", &h)?;
        finite("endpoint cost", &[prob.endpoint_cost(&x, &xf, t0, tf)])?;
        finite("running cost", &[prob.running_cost(&x, &u, t)])?;
    }
    Ok(())
}

fn finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} component {i}"))),
        None => Ok(()),
    }
}

/// Time-indexed solution of a transcribed problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Grid,
    /// One row of `nx` states per node.
    pub x: Vec<Vec<f64>>,
    /// One row of `nu` controls per node.
    pub u: Vec<Vec<f64>>,
    /// Canonical-time derivative samples of the Birkhoff methods.
    pub v: Option<Vec<Vec<f64>>>,
    pub t0: f64,
    pub tf: f64,
    pub objective: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.grid.nodes().iter().map(|&tau| crate::grid::affine_time(tau, self.t0, self.tf)).collect()
    }

    /// Samples of state component `i` at the nodes.
    pub fn state_column(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[i]).collect()
    }

    pub fn control_column(&self, i: usize) -> Vec<f64> {
        self.u.iter().map(|r| r[i]).collect()
    }
}

/// Minimum-time circle-to-circle transfer in polar coordinates with a
/// constant-magnitude thrust acceleration. Canonical units: `μ = 1`, initial
/// radius 1. State `(r, θ, v_r, v_t)`, control the steering angle.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTransfer {
    pub accel: f64,
    pub r_ratio: f64,
}

const MU: f64 = 1.0;

pub fn make_orbit_transfer(accel: f64, r_ratio: f64) -> Result<OrbitTransfer> {
    if !(accel > 0.0) || !accel.is_finite() {
        return Err(invalid("A", format!("thrust acceleration must be positive, got {accel}")));
    }
    if !(r_ratio > 0.0) || !r_ratio.is_finite() {
        return Err(invalid("r_ratio", format!("radius ratio must be positive, got {r_ratio}")));
    }
    Ok(OrbitTransfer { accel, r_ratio })
}

impl OrbitTransfer {
    pub fn initial_state(&self) -> [f64; 4] {
        [1.0, 0.0, 0.0, MU.sqrt()]
    }

    /// `(r_f, v_r,f, v_t,f)`.
    pub fn terminal_target(&self) -> [f64; 3] {
        [self.r_ratio, 0.0, (MU / self.r_ratio).sqrt()]
    }

    /// Transfer time of a slow circular spiral, `|v_0 - v_f| / A`.
    pub fn spiral_time(&self) -> f64 {
        (1.0 - (1.0 / self.r_ratio).sqrt()).abs() / self.accel
    }
}

impl OcpProblem for OrbitTransfer {
    fn name(&self) -> &str {
        "oxfer"
    }

    fn nx(&self) -> usize {
        4
    }

    fn nu(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &[f64], u: &[f64], _t: f64, out: &mut [f64]) {
        let (r, vr, vt) = (x[0], x[2], x[3]);
        let (s, c) = u[0].sin_cos();
        out[0] = vr;
        out[1] = vt / r;
        out[2] = vt * vt / r - MU / (r * r) + self.accel * s;
        out[3] = -vr * vt / r + self.accel * c;
    }

    fn dynamics_jacobian(&self, x: &[f64], u: &[f64], _t: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let (r, vr, vt) = (x[0], x[2], x[3]);
        let (s, c) = u[0].sin_cos();
        let r2 = r * r;
        #[rustfmt::skip]
        let jx = DMatrix::from_row_slice(4, 4, &[
            0.0, 0.0, 1.0, 0.0,
            -vt / r2, 0.0, 0.0, 1.0 / r,
            -vt * vt / r2 + 2.0 * MU / (r2 * r), 0.0, 0.0, 2.0 * vt / r,
            vr * vt / r2, 0.0, -vt / r, -vr / r,
        ]);
        let ju = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, self.accel * c, -self.accel * s]);
        Some((jx, ju))
    }

    fn endpoint_cost(&self, _x0: &[f64], _xf: &[f64], _t0: f64, tf: f64) -> f64 {
        tf
    }

    fn n_endpoint(&self) -> usize {
        7
    }

    fn endpoint_fn(&self, x0: &[f64], xf: &[f64], _t0: f64, _tf: f64, out: &mut [f64]) {
        out[..4].copy_from_slice(x0);
        out[4] = xf[0];
        out[5] = xf[2];
        out[6] = xf[3];
    }

    fn endpoint_bounds(&self) -> Bounds {
        let mut v = self.initial_state().to_vec();
        v.extend(self.terminal_target());
        Bounds::equal(v)
    }

    fn state_bounds(&self) -> Bounds {
        let rmax = 10.0 * self.r_ratio.max(1.0);
        Bounds::new(
            vec![0.1 * self.r_ratio.min(1.0), f64::NEG_INFINITY, -10.0, -10.0],
            vec![rmax, f64::INFINITY, 10.0, 10.0],
        )
    }

    fn time_spec(&self) -> TimeSpec {
        let ts = self.spiral_time().max(1e-3);
        TimeSpec::FreeFinal {
            t0: 0.0,
            tf_min: 0.1 * ts,
            tf_max: 10.0 * ts,
            tf_guess: ts,
        }
    }

    /// Tangential-thrust spiral from the initial orbit, flown for the spiral
    /// time and sampled at the nodes.
    fn initial_guess(&self, tau: &[f64]) -> InitialGuess {
        let tf = self.spiral_time().max(1e-3);
        let times: Vec<f64> = tau.iter().map(|&s| crate::grid::affine_time(s, 0.0, tf)).collect();
        let n = tau.len();
        let prop = ode::integrate(
            |_, x, dx| self.dynamics(x, &[0.0], 0.0, dx),
            &self.initial_state(),
            &times,
            1e-10,
            1e-12,
        );
        let x = match prop {
            Ok(sol) => DMatrix::from_fn(n, 4, |k, i| sol.states[k][i]),
            Err(_) => {
                let x0 = self.initial_state();
                let xf = [self.r_ratio, 0.0, 0.0, (MU / self.r_ratio).sqrt()];
                DMatrix::from_fn(n, 4, |k, i| x0[i] + 0.5 * (tau[k] + 1.0) * (xf[i] - x0[i]))
            }
        };
        InitialGuess {
            x,
            u: DMatrix::zeros(n, 1),
            tf,
        }
    }
}

/// Rest-to-rest minimum-time double integrator, `|u| ≤ 1`, unit distance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleIntegrator;

pub fn make_double_integrator() -> DoubleIntegrator {
    DoubleIntegrator
}

impl OcpProblem for DoubleIntegrator {
    fn name(&self) -> &str {
        "double-integrator"
    }

    fn nx(&self) -> usize {
        2
    }

    fn nu(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &[f64], u: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = x[1];
        out[1] = u[0];
    }

    fn dynamics_jacobian(&self, _x: &[f64], _u: &[f64], _t: f64) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
        ))
    }

    fn endpoint_cost(&self, _x0: &[f64], _xf: &[f64], _t0: f64, tf: f64) -> f64 {
        tf
    }

    fn n_endpoint(&self) -> usize {
        4
    }

    fn endpoint_fn(&self, x0: &[f64], xf: &[f64], _t0: f64, _tf: f64, out: &mut [f64]) {
        out[..2].copy_from_slice(x0);
        out[2..].copy_from_slice(xf);
    }

    fn endpoint_bounds(&self) -> Bounds {
        Bounds::equal(vec![0.0, 0.0, 1.0, 0.0])
    }

    fn control_bounds(&self) -> Bounds {
        Bounds::new(vec![-1.0], vec![1.0])
    }

    fn time_spec(&self) -> TimeSpec {
        TimeSpec::FreeFinal {
            t0: 0.0,
            tf_min: 0.1,
            tf_max: 10.0,
            tf_guess: 3.0,
        }
    }

    /// Straight-line position profile at rest, zero control.
    fn initial_guess(&self, tau: &[f64]) -> InitialGuess {
        let n = tau.len();
        InitialGuess {
            x: DMatrix::from_fn(n, 2, |k, i| if i == 0 { 0.5 * (tau[k] + 1.0) } else { 0.0 }),
            u: DMatrix::zeros(n, 1),
            tf: 3.0,
        }
    }
}

/// Scalar regulator `x' = u`, `x(0) = x0`, minimizing `∫ (x² + u²) dt` over a
/// fixed horizon with a free final state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarRegulator {
    pub x0: f64,
    pub horizon: f64,
}

impl ScalarRegulator {
    /// Optimal cost `x0² tanh(T)` from the Riccati solution `P(t) = tanh(T - t)`.
    pub fn optimal_cost(&self) -> f64 {
        self.x0 * self.x0 * self.horizon.tanh()
    }

    /// Optimal state `x0 cosh(T - t) / cosh(T)`.
    pub fn optimal_state(&self, t: f64) -> f64 {
        self.x0 * (self.horizon - t).cosh() / self.horizon.cosh()
    }
}

impl OcpProblem for ScalarRegulator {
    fn name(&self) -> &str {
        "regulator"
    }

    fn nx(&self) -> usize {
        1
    }

    fn nu(&self) -> usize {
        1
    }

    fn dynamics(&self, _x: &[f64], u: &[f64], _t: f64, out: &mut [f64]) {
        out[0] = u[0];
    }

    fn endpoint_cost(&self, _x0: &[f64], _xf: &[f64], _t0: f64, _tf: f64) -> f64 {
        0.0
    }

    fn has_running_cost(&self) -> bool {
        true
    }

    fn running_cost(&self, x: &[f64], u: &[f64], _t: f64) -> f64 {
        x[0] * x[0] + u[0] * u[0]
    }

    fn n_endpoint(&self) -> usize {
        1
    }

    fn endpoint_fn(&self, x0: &[f64], _xf: &[f64], _t0: f64, _tf: f64, out: &mut [f64]) {
        out[0] = x0[0];
    }

    fn endpoint_bounds(&self) -> Bounds {
        Bounds::equal(vec![self.x0])
    }

    fn time_spec(&self) -> TimeSpec {
        TimeSpec::Fixed {
            t0: 0.0,
            tf: self.horizon,
        }
    }
}

/// JSON descriptor of a built-in problem with parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "problem", rename_all = "kebab-case")]
pub enum ProblemDescriptor {
    #[serde(rename = "oxfer")]
    OrbitTransfer {
        #[serde(rename = "A", default = "default_accel")]
        accel: f64,
        #[serde(default = "default_ratio")]
        r_ratio: f64,
    },
    DoubleIntegrator,
    Regulator {
        #[serde(default = "one")]
        x0: f64,
        #[serde(default = "one")]
        horizon: f64,
    },
}

fn default_accel() -> f64 {
    0.01
}

fn default_ratio() -> f64 {
    6.0
}

fn one() -> f64 {
    1.0
}

impl ProblemDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<Box<dyn OcpProblem>> {
        Ok(match *self {
            ProblemDescriptor::OrbitTransfer { accel, r_ratio } => Box::new(make_orbit_transfer(accel, r_ratio)?),
            ProblemDescriptor::DoubleIntegrator => Box::new(make_double_integrator()),
            ProblemDescriptor::Regulator { x0, horizon } => {
                if !(horizon > 0.0) || !horizon.is_finite() || !x0.is_finite() {
                    return Err(invalid("horizon", "regulator needs finite x0 and a positive horizon"));
                }
                Box::new(ScalarRegulator { x0, horizon })
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    #[test]
    fn orbit_transfer_boundary_data() {
        let p = make_orbit_transfer(5e-4, 6.0).unwrap();
        assert_eq!(p.initial_state(), [1.0, 0.0, 0.0, 1.0]);
        let t = p.terminal_target();
        assert_eq!(t[0], 6.0);
        assert_eq!(t[1], 0.0);
        assert_eq!(t[2], (1.0f64 / 6.0).sqrt());
        assert!(make_orbit_transfer(0.0, 6.0).is_err());
        assert!(make_orbit_transfer(1e-3, -1.0).is_err());
    }

    #[test]
    fn circular_orbit_is_an_equilibrium_of_the_radial_dynamics() {
        let p = OrbitTransfer { accel: 0.0, r_ratio: 6.0 };
        let mut dx = [0.0; 4];
        p.dynamics(&[1.0, 0.0, 0.0, 1.0], &[0.0], 0.0, &mut dx);
        assert_eq!(dx, [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn coasting_orbit_keeps_unit_radius_over_a_period() {
        let p = OrbitTransfer { accel: 0.0, r_ratio: 6.0 };
        let times: Vec<f64> = (0..=64).map(|k| 2.0 * PI * k as f64 / 64.0).collect();
        let sol = ode::integrate(
            |_, x, dx| p.dynamics(x, &[0.0], 0.0, dx),
            &p.initial_state(),
            &times,
            1e-12,
            1e-14,
        )
        .unwrap();
        for s in &sol.states {
            assert!((s[0] - 1.0).abs() <= 1e-9);
        }
        assert!((sol.states[64][1] - 2.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn orbit_jacobian_matches_differences() {
        let p = make_orbit_transfer(0.01, 6.0).unwrap();
        let x = [1.3, 0.4, 0.05, 0.8];
        let u = [0.7];
        let (jx, ju) = p.dynamics_jacobian(&x, &u, 0.0).unwrap();
        let z: Vec<f64> = x.iter().chain(&u).copied().collect();
        let fdj = fd::jacobian(&z, 4, |z, out| p.dynamics(&z[..4], &z[4..], 0.0, out));
        assert!((fdj.view((0, 0), (4, 4)) - &jx).amax() < 1e-9);
        assert!((fdj.view((0, 4), (4, 1)) - &ju).amax() < 1e-9);
    }

    #[test]
    fn double_integrator_data() {
        let p = make_double_integrator();
        let mut dx = [0.0; 2];
        p.dynamics(&[0.0, 0.0], &[1.0], 0.0, &mut dx);
        assert_eq!(dx, [0.0, 1.0]);
        let mut e = [0.0; 4];
        p.endpoint_fn(&[0.0, 0.0], &[1.0, 0.0], 0.0, 2.0, &mut e);
        let b = p.endpoint_bounds();
        let resid: Vec<f64> = e.iter().zip(&b.lower).map(|(a, b)| a - b).collect();
        assert_eq!(resid, vec![0.0; 4]);
    }

    #[test]
    fn bang_bang_control_reaches_the_target_in_two_units() {
        // Pontryagin: u = +1 on [0, 1], -1 on [1, 2].
        let p = make_double_integrator();
        let half = ode::integrate(|_, x, dx| p.dynamics(x, &[1.0], 0.0, dx), &[0.0, 0.0], &[0.0, 1.0], 1e-12, 1e-14)
            .unwrap();
        let end = ode::integrate(
            |_, x, dx| p.dynamics(x, &[-1.0], 0.0, dx),
            &half.states[1],
            &[1.0, 2.0],
            1e-12,
            1e-14,
        )
        .unwrap();
        assert!((end.states[1][0] - 1.0).abs() < 1e-12);
        assert!(end.states[1][1].abs() < 1e-12);
    }

    #[test]
    fn builtin_problems_validate() {
        validate_problem(&make_orbit_transfer(0.01, 6.0).unwrap(), 200, 7).unwrap();
        validate_problem(&make_double_integrator(), 200, 7).unwrap();
        validate_problem(&ScalarRegulator { x0: 1.0, horizon: 2.0 }, 50, 7).unwrap();
    }

    struct Broken;
    impl OcpProblem for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn nx(&self) -> usize {
            1
        }
        fn nu(&self) -> usize {
            0
        }
        fn dynamics(&self, x: &[f64], _u: &[f64], _t: f64, out: &mut [f64]) {
            out[0] = 1.0 / (x[0] - x[0]);
        }
        fn endpoint_cost(&self, _: &[f64], _: &[f64], _: f64, _: f64) -> f64 {
            0.0
        }
        fn n_endpoint(&self) -> usize {
            0
        }
        fn endpoint_fn(&self, _: &[f64], _: &[f64], _: f64, _: f64, _: &mut [f64]) {}
        fn endpoint_bounds(&self) -> Bounds {
            Bounds::new(vec![1.0], vec![0.0])
        }
        fn time_spec(&self) -> TimeSpec {
            TimeSpec::Fixed { t0: 0.0, tf: 1.0 }
        }
    }

    #[test]
    fn validation_catches_bad_problems() {
        assert!(validate_problem(&Broken, 5, 1).is_err());
    }

    #[test]
    fn descriptor_parsing() {
        let d = ProblemDescriptor::from_json(r#"{"problem": "oxfer", "A": 5e-4, "r_ratio": 6}"#).unwrap();
        assert_eq!(d, ProblemDescriptor::OrbitTransfer { accel: 5e-4, r_ratio: 6.0 });
        let p = d.build().unwrap();
        assert_eq!(p.nx(), 4);
        let d = ProblemDescriptor::from_json(r#"{"problem": "double-integrator"}"#).unwrap();
        assert_eq!(d.build().unwrap().name(), "double-integrator");
        assert!(ProblemDescriptor::from_json(r#"{"problem": "oxfer", "A": -1}"#).unwrap().build().is_err());
        assert!(ProblemDescriptor::from_json(r#"{"problem": "glider"}"#).is_err());
    }

    #[test]
    fn spiral_guess_climbs_toward_the_target() {
        let p = make_orbit_transfer(0.01, 6.0).unwrap();
        let g = Grid::new(crate::grid::GridKind::Cgl, 16).unwrap();
        let guess = p.initial_guess(g.nodes());
        assert_eq!(guess.x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 1.0]);
        assert!(guess.x[(16, 0)] > 4.0, "r_f = {}", guess.x[(16, 0)]);
        assert!((guess.tf - p.spiral_time()).abs() < 1e-12);
    }
}
