//! Adaptive Dormand–Prince 5(4) integration with exact landing on output times.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    /// One state per requested output time.
    pub states: Vec<Vec<f64>>,
    pub stats: IntegratorStats,
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order weights minus the embedded fourth-order ones.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_STEPS: usize = 5_000_000;

/// Integrates `x' = f(t, x)` from `times[0]` through every later entry of
/// `times`, which must be strictly increasing.
pub fn integrate<F>(mut f: F, x0: &[f64], times: &[f64], rtol: f64, atol: f64) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(rtol > 0.0) {
        return Err(invalid("rtol", format!("must be positive, got {rtol}")));
    }
    if !(atol > 0.0) {
        return Err(invalid("atol", format!("must be positive, got {atol}")));
    }
    if times.is_empty() || times.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(invalid("times", "output times must be strictly increasing"));
    }
    let n = x0.len();
    let mut stats = IntegratorStats::default();
    let mut states = vec![x0.to_vec()];
    let mut t = times[0];
    let mut x = x0.to_vec();
    let mut k = vec![vec![0.0; n]; 7];
    let mut stage = vec![0.0; n];
    let mut xnew = vec![0.0; n];
    f(t, &x, &mut k[0]);
    stats.evaluations += 1;
    let span = times[times.len() - 1] - t;
    let mut h = initial_step(&x, &k[0], span, rtol, atol);

    for &target in &times[1..] {
        while t < target {
            if stats.steps + stats.rejected >= MAX_STEPS {
                return Err(Error::StepSizeUnderflow { t });
            }
            let last = h >= target - t;
            let step = if last { target - t } else { h };
            if step <= 16.0 * f64::EPSILON * t.abs().max(1.0) && !last {
                return Err(Error::StepSizeUnderflow { t });
            }
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += A[s][j] * kj[i];
                    }
                    stage[i] = x[i] + step * acc;
                }
                let (_, tail) = k.split_at_mut(s);
                f(t + C[s] * step, &stage, &mut tail[0]);
                stats.evaluations += 1;
            }
            // The seventh stage is evaluated at the fifth-order solution.
            xnew.copy_from_slice(&stage);
            let mut err = 0.0_f64;
            for i in 0..n {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                let sc = atol + rtol * x[i].abs().max(xnew[i].abs());
                err = err.max((step * e / sc).abs());
            }
            if !err.is_finite() {
                h = 0.25 * step;
                stats.rejected += 1;
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t });
                }
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                stats.steps += 1;
                t = if last { target } else { t + step };
                std::mem::swap(&mut x, &mut xnew);
                let (first, rest) = k.split_at_mut(1);
                first[0].copy_from_slice(&rest[5]);
                // Only grow the nominal step from full (unclipped) steps.
                h = if last { h.max(step * factor) } else { step * factor };
            } else {
                stats.rejected += 1;
                h = step * factor.min(1.0);
                if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow { t });
                }
            }
        }
        states.push(x.clone());
    }
    Ok(OdeSolution { states, stats })
}

fn initial_step(x: &[f64], dx: &[f64], span: f64, rtol: f64, atol: f64) -> f64 {
    let mut d0 = 0.0_f64;
    let mut d1 = 0.0_f64;
    for (xi, di) in x.iter().zip(dx) {
        let sc = atol + rtol * xi.abs();
        d0 = d0.max(xi.abs() / sc);
        d1 = d1.max(di.abs() / sc);
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(span).max(1e-12 * span)
}
