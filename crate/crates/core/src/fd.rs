//! Central finite differences for user evaluators.

use nalgebra::DMatrix;

/// `ε^{1/3}`, the balanced central-difference step for first derivatives.
pub fn jacobian_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// `ε^{1/4}`, the balanced step for second differences.
pub fn hessian_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * x.abs().max(1.0)
}

/// `m × n` Jacobian of `f` at `x` by central differences.
pub fn jacobian<F>(x: &[f64], m: usize, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    for j in 0..n {
        let h = jacobian_step(x[j]);
        xp[j] = x[j] + h;
        f(&xp, &mut fp);
        xp[j] = x[j] - h;
        f(&xp, &mut fm);
        xp[j] = x[j];
        let inv = 1.0 / (2.0 * h);
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) * inv;
        }
    }
    jac
}

pub fn gradient<F>(x: &[f64], mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = jacobian_step(x[j]);
            xp[j] = x[j] + h;
            let fp = f(&xp);
            xp[j] = x[j] - h;
            let fm = f(&xp);
            xp[j] = x[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Symmetric Hessian of a scalar function from second central differences.
pub fn hessian<F>(x: &[f64], mut f: F) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let f0 = f(x);
    let steps: Vec<f64> = x.iter().map(|&v| hessian_step(v)).collect();
    for a in 0..n {
        let ha = steps[a];
        xp[a] = x[a] + ha;
        let fp = f(&xp);
        xp[a] = x[a] - ha;
        let fm = f(&xp);
        xp[a] = x[a];
        h[(a, a)] = (fp - 2.0 * f0 + fm) / (ha * ha);
        for b in 0..a {
            let hb = steps[b];
            let mut corner = |sa: f64, sb: f64| {
                xp[a] = x[a] + sa * ha;
                xp[b] = x[b] + sb * hb;
                let v = f(&xp);
                xp[a] = x[a];
                xp[b] = x[b];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * ha * hb);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}
