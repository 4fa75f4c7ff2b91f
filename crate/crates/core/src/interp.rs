//! Barycentric Lagrange interpolation, the pseudospectral differentiation
//! matrix and Chebyshev modal coefficients.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridKind};
use crate::linalg::exact_sum;

/// Distance below which a query point is treated as coinciding with a node.
pub const NODE_SNAP: f64 = 1e-14;
/// Slack allowed outside `[-1, 1]` before a query is rejected.
pub const DOMAIN_SLACK: f64 = 1e-12;

/// Barycentric weights of a node set, kept as signed log-magnitudes so that
/// weight ratios survive even when the weights themselves would underflow.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalBasis {
    nodes: Vec<f64>,
    log_mag: Vec<f64>,
    sign: Vec<f64>,
    weights: Vec<f64>,
}

impl NodalBasis {
    fn from_logs(nodes: Vec<f64>, log_mag: Vec<f64>, sign: Vec<f64>) -> Self {
        let top = log_mag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights = log_mag
            .iter()
            .zip(&sign)
            .map(|(&l, &s)| s * (l - top).exp())
            .collect();
        NodalBasis {
            nodes,
            log_mag,
            sign,
            weights,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Weights rescaled so that the largest magnitude is one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `w_j / w_i` evaluated from the log-magnitudes.
    pub fn weight_ratio(&self, j: usize, i: usize) -> f64 {
        self.sign[j] * self.sign[i] * (self.log_mag[j] - self.log_mag[i]).exp()
    }

    /// Values of every basis polynomial at `x`. Snaps to the Kronecker
    /// vector when `x` is within [`NODE_SNAP`] of a node.
    pub fn basis_values(&self, x: f64) -> Vec<f64> {
        let n = self.nodes.len();
        let mut out = vec![0.0; n];
        if let Some(k) = self.snap(x) {
            out[k] = 1.0;
            return out;
        }
        let mut total = 0.0;
        for j in 0..n {
            let t = self.weights[j] / (x - self.nodes[j]);
            out[j] = t;
            total += t;
        }
        for v in &mut out {
            *v /= total;
        }
        out
    }

    /// Second-form barycentric evaluation of the interpolant of `samples`.
    pub fn eval(&self, samples: &[f64], x: f64) -> f64 {
        if let Some(k) = self.snap(x) {
            return samples[k];
        }
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..self.nodes.len() {
            let t = self.weights[j] / (x - self.nodes[j]);
            num += t * samples[j];
            den += t;
        }
        num / den
    }

    fn snap(&self, x: f64) -> Option<usize> {
        // Nodes are sorted, so the nearest one is adjacent to the insertion point.
        let pos = self.nodes.partition_point(|&t| t < x);
        [pos.wrapping_sub(1), pos]
            .into_iter()
            .filter(|&k| k < self.nodes.len())
            .find(|&k| (x - self.nodes[k]).abs() <= NODE_SNAP)
    }
}

/// Lagrange basis on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeBasis {
    grid: Grid,
    nodal: NodalBasis,
}

/// Barycentric basis for the grid. CGL uses the closed-form weights, every
/// other family the product formula accumulated in log space.
pub fn build_basis(grid: &Grid) -> Result<LagrangeBasis> {
    let n = grid.order();
    let nodes = grid.nodes().to_vec();
    let (log_mag, sign): (Vec<f64>, Vec<f64>) = if grid.kind() == GridKind::Cgl {
        (0..=n)
            .map(|j| {
                let half = if j == 0 || j == n { 0.5f64.ln() } else { 0.0 };
                (half, parity(n - j))
            })
            .unzip()
    } else {
        let mut logs = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let mut terms = Vec::with_capacity(n);
            for k in (0..=n).filter(|&k| k != j) {
                let d = grid.node_difference(j, k);
                if d == 0.0 {
                    return Err(Error::DuplicateNodes {
                        i: j.min(k),
                        j: j.max(k),
                    });
                }
                terms.push(-d.abs().ln());
            }
            logs.push(exact_sum(terms));
        }
        (logs, (0..=n).map(|j| parity(n - j)).collect())
    };
    Ok(LagrangeBasis {
        grid: grid.clone(),
        nodal: NodalBasis::from_logs(nodes, log_mag, sign),
    })
}

fn parity(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl LagrangeBasis {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.grid.order()
    }

    pub fn bary_weights(&self) -> &[f64] {
        self.nodal.weights()
    }

    pub fn nodal(&self) -> &NodalBasis {
        &self.nodal
    }

    /// Basis of the grid with node `drop` removed. Its weights follow from
    /// the parent ones as `w_j (τ_j - τ_drop)`.
    pub fn without_node(&self, drop: usize) -> NodalBasis {
        let n = self.grid.order();
        let mut nodes = Vec::with_capacity(n);
        let mut log_mag = Vec::with_capacity(n);
        let mut sign = Vec::with_capacity(n);
        for j in (0..=n).filter(|&j| j != drop) {
            let d = self.grid.node_difference(j, drop);
            nodes.push(self.grid.nodes()[j]);
            log_mag.push(self.nodal.log_mag[j] + d.abs().ln());
            sign.push(self.nodal.sign[j] * d.signum());
        }
        NodalBasis::from_logs(nodes, log_mag, sign)
    }

    /// Values of all `N+1` basis polynomials at `x`.
    pub fn basis_values(&self, x: f64) -> Result<Vec<f64>> {
        check_query(x)?;
        Ok(self.nodal.basis_values(x))
    }
}

fn check_query(x: f64) -> Result<()> {
    if !(-1.0 - DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&x) {
        return Err(Error::OutOfDomain { value: x });
    }
    Ok(())
}

/// Evaluates the polynomial interpolant of `samples` at each query point.
pub fn interpolate(basis: &LagrangeBasis, samples: &[f64], query: &[f64]) -> Result<Vec<f64>> {
    check_samples(basis, samples)?;
    query
        .iter()
        .map(|&x| {
            check_query(x)?;
            Ok(basis.nodal.eval(samples, x))
        })
        .collect()
}

fn check_samples(basis: &LagrangeBasis, samples: &[f64]) -> Result<()> {
    if samples.len() != basis.grid.len() {
        return Err(Error::ShapeMismatch {
            context: "interpolate",
            expected: format!("{} samples", basis.grid.len()),
            got: samples.len().to_string(),
        });
    }
    if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample {i}")));
    }
    Ok(())
}

/// How controls are reconstructed between nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlInterpolation {
    #[default]
    Lagrange,
    PiecewiseLinear,
}

impl FromStr for ControlInterpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lagrange" => Ok(Self::Lagrange),
            "linear" | "piecewise-linear" => Ok(Self::PiecewiseLinear),
            _ => Err(invalid("control-interp", format!("unknown interpolation `{s}`"))),
        }
    }
}

/// Interpolates `samples` with the chosen rule.
pub fn interpolate_with(
    rule: ControlInterpolation,
    basis: &LagrangeBasis,
    samples: &[f64],
    query: &[f64],
) -> Result<Vec<f64>> {
    match rule {
        ControlInterpolation::Lagrange => interpolate(basis, samples, query),
        ControlInterpolation::PiecewiseLinear => {
            check_samples(basis, samples)?;
            let nodes = basis.grid.nodes();
            query
                .iter()
                .map(|&x| {
                    check_query(x)?;
                    let x = x.clamp(nodes[0], nodes[nodes.len() - 1]);
                    let k = nodes.partition_point(|&t| t <= x).clamp(1, nodes.len() - 1);
                    let (a, b) = (nodes[k - 1], nodes[k]);
                    let s = (x - a) / (b - a);
                    Ok(samples[k - 1] + s * (samples[k] - samples[k - 1]))
                })
                .collect()
        }
    }
}

/// Differentiation matrix with the partitions used by the collocation methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOperators {
    /// Full `(N+1)×(N+1)` matrix, `D_ij = L_j'(τ_i)`.
    pub d: DMatrix<f64>,
    /// Rows and columns `1..=N`.
    pub da: DMatrix<f64>,
    /// Rows and columns `0..N`.
    pub db: DMatrix<f64>,
    /// `L_0'` at `τ_1..τ_N`.
    pub l0: DVector<f64>,
    /// `L_N'` at `τ_0..τ_{N-1}`.
    pub ln: DVector<f64>,
}

/// Builds `D` from the barycentric formula `(w_j / w_i) / (τ_i - τ_j)` with
/// the diagonal set to minus the (exactly summed) off-diagonal row sum.
pub fn diff_matrix(basis: &LagrangeBasis) -> SpectralOperators {
    let n = basis.order();
    let grid = &basis.grid;
    let mut d = DMatrix::zeros(n + 1, n + 1);
    let mut row = vec![0.0; n];
    for i in 0..=n {
        row.clear();
        for j in (0..=n).filter(|&j| j != i) {
            let v = basis.nodal.weight_ratio(j, i) / grid.node_difference(i, j);
            d[(i, j)] = v;
            row.push(v);
        }
        d[(i, i)] = -exact_sum(row.iter().copied());
    }
    let da = d.view((1, 1), (n, n)).into_owned();
    let db = d.view((0, 0), (n, n)).into_owned();
    let l0 = DVector::from_iterator(n, (1..=n).map(|i| d[(i, 0)]));
    let ln = DVector::from_iterator(n, (0..n).map(|i| d[(i, n)]));
    SpectralOperators { d, da, db, l0, ln }
}

/// Chebyshev coefficients `a_0..a_N` of a function sampled on CGL nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCoefficients {
    pub coeffs: Vec<f64>,
}

impl SpectralCoefficients {
    /// `Σ a_m T_m(x)` by Clenshaw's recurrence.
    pub fn eval(&self, x: f64) -> f64 {
        let (mut b1, mut b2) = (0.0, 0.0);
        for &a in self.coeffs.iter().skip(1).rev() {
            let b0 = a + 2.0 * x * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        self.coeffs.first().copied().unwrap_or(0.0) + x * b1 - b2
    }

    /// `max |a_m|` over the trailing `ceil(frac·(N+1))` coefficients divided
    /// by `max |a_m|` overall. At least two coefficients are inspected so an
    /// even or odd function cannot hide behind a zero last coefficient. Zero
    /// for the zero function.
    pub fn tail_ratio(&self, frac: f64) -> f64 {
        let len = self.coeffs.len();
        let k = ((frac * len as f64).ceil() as usize).max(2).min(len);
        let all = self.coeffs.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        if all == 0.0 {
            return 0.0;
        }
        let tail = self.coeffs[len - k..].iter().fold(0.0_f64, |m, a| m.max(a.abs()));
        tail / all
    }
}

/// Discrete Chebyshev transform of CGL samples.
pub fn modal_coefficients(grid: &Grid, samples: &[f64]) -> Result<SpectralCoefficients> {
    if grid.kind() != GridKind::Cgl {
        return Err(Error::UnsupportedGrid {
            what: "modal coefficients",
            grid: grid.kind().to_string(),
            reason: "the Chebyshev transform is defined on CGL nodes",
        });
    }
    let n = grid.order();
    if samples.len() != n + 1 {
        return Err(Error::ShapeMismatch {
            context: "modal_coefficients",
            expected: format!("{} samples", n + 1),
            got: samples.len().to_string(),
        });
    }
    let two_n = 2 * n;
    // T_m(-cos θ_j) = (-1)^m cos(m θ_j), θ_j = jπ/N; reduce m·j mod 2N for accuracy.
    let coeffs = (0..=n)
        .map(|m| {
            let terms = (0..=n).map(|j| {
                let half = if j == 0 || j == n { 0.5 } else { 1.0 };
                let angle = PI * ((m * j) % two_n) as f64 / n as f64;
                half * samples[j] * angle.cos()
            });
            let c = if m == 0 || m == n { 2.0 } else { 1.0 };
            parity(m) * 2.0 / (n as f64 * c) * exact_sum(terms)
        })
        .collect();
    Ok(SpectralCoefficients { coeffs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::poly::chebyshev_t;
    use proptest::prelude::*;

    fn grid(kind: GridKind, n: usize) -> Grid {
        Grid::new(kind, n).unwrap()
    }

    const ALL: [GridKind; 5] = [
        GridKind::Cgl,
        GridKind::Lgl,
        GridKind::Lgr,
        GridKind::Cg,
        GridKind::Uniform,
    ];

    #[test]
    fn two_point_basis() {
        let b = build_basis(&grid(GridKind::Cgl, 1)).unwrap();
        assert_eq!(b.bary_weights(), &[-1.0, 1.0]);
        let ops = diff_matrix(&b);
        assert_eq!(ops.d.as_slice(), &[-0.5, -0.5, 0.5, 0.5]);
    }

    #[test]
    fn weights_match_product_formula() {
        for kind in ALL {
            let g = grid(kind, 8);
            let b = build_basis(&g).unwrap();
            let t = g.nodes();
            let raw: Vec<f64> = (0..9)
                .map(|j| 1.0 / (0..9).filter(|&k| k != j).map(|k| t[j] - t[k]).product::<f64>())
                .collect();
            let scale = raw.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
            for j in 0..9 {
                let w = raw[j] / scale;
                assert!((b.bary_weights()[j] - w).abs() <= 1e-13 * w.abs(), "{kind} j={j}");
            }
        }
    }

    #[test]
    fn weights_alternate_in_sign() {
        for kind in ALL {
            let b = build_basis(&grid(kind, 33)).unwrap();
            assert!(b.bary_weights().windows(2).all(|p| p[0] * p[1] < 0.0), "{kind}");
        }
    }

    #[test]
    fn cubic_interpolation_on_cgl() {
        let g = grid(GridKind::Cgl, 5);
        let b = build_basis(&g).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|t| t * t * t).collect();
        let v = interpolate(&b, &s, &[0.3]).unwrap()[0];
        assert!((v - 0.027).abs() <= 1e-13);
        assert_eq!(interpolate(&b, &[4.0; 6], &[-0.77, 0.1]).unwrap(), vec![4.0, 4.0]);
        assert_eq!(interpolate(&b, &s, &[g.nodes()[2]]).unwrap()[0], s[2]);
    }

    #[test]
    fn interpolation_rejects_extrapolation() {
        let b = build_basis(&grid(GridKind::Lgl, 4)).unwrap();
        let err = interpolate(&b, &[0.0; 5], &[1.1]).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
        assert!(interpolate(&b, &[0.0; 5], &[1.0 + 1e-13]).is_ok());
        assert!(interpolate(&b, &[0.0; 4], &[0.0]).is_err());
    }

    #[test]
    fn piecewise_linear_interpolation() {
        let g = grid(GridKind::Uniform, 2);
        let b = build_basis(&g).unwrap();
        let v = interpolate_with(
            ControlInterpolation::PiecewiseLinear,
            &b,
            &[0.0, 2.0, 0.0],
            &[-1.0, -0.5, 0.0, 0.25, 1.0],
        )
        .unwrap();
        assert_eq!(v, vec![0.0, 1.0, 2.0, 1.5, 0.0]);
    }

    #[test]
    fn derivative_of_quadratic_on_cgl8() {
        let g = grid(GridKind::Cgl, 8);
        let ops = diff_matrix(&build_basis(&g).unwrap());
        let s = DVector::from_iterator(9, g.nodes().iter().map(|t| t * t));
        let ds = &ops.d * s;
        for (i, t) in g.nodes().iter().enumerate() {
            assert!((ds[i] - 2.0 * t).abs() <= 1e-12);
        }
    }

    #[test]
    fn partitions_are_consistent() {
        let ops = diff_matrix(&build_basis(&grid(GridKind::Lgl, 6)).unwrap());
        assert_eq!(ops.da[(0, 0)], ops.d[(1, 1)]);
        assert_eq!(ops.db[(5, 5)], ops.d[(5, 5)]);
        assert_eq!(ops.l0[0], ops.d[(1, 0)]);
        assert_eq!(ops.ln[5], ops.d[(5, 6)]);
    }

    #[test]
    fn rows_sum_to_zero_exactly() {
        for kind in ALL {
            for n in [3, 16, 100] {
                let ops = diff_matrix(&build_basis(&grid(kind, n)).unwrap());
                for i in 0..=n {
                    let r = exact_sum(ops.d.row(i).iter().copied());
                    assert!(r.abs() <= f64::EPSILON * ops.d[(i, i)].abs(), "{kind} {n} {i}");
                }
            }
        }
    }

    #[test]
    fn modal_examples() {
        let g = grid(GridKind::Cgl, 8);
        let s: Vec<f64> = g.nodes().iter().map(|&t| chebyshev_t(3, t)).collect();
        let c = modal_coefficients(&g, &s).unwrap();
        for (m, a) in c.coeffs.iter().enumerate() {
            let want = if m == 3 { 1.0 } else { 0.0 };
            assert!((a - want).abs() <= 1e-13, "m={m} a={a}");
        }
        let c = modal_coefficients(&g, &[5.0; 9]).unwrap();
        assert!((c.coeffs[0] - 5.0).abs() < 1e-14);
        assert!(c.coeffs[1..].iter().all(|a| a.abs() < 1e-14));
        assert!(modal_coefficients(&grid(GridKind::Lgl, 8), &[0.0; 9]).is_err());
    }

    #[test]
    fn modal_exp_matches_projection_oracle() {
        // Independent oracle: a_m = (2/π)∫_0^π e^{cos θ} cos(mθ) dθ, halved for m = 0.
        // The N = 16 discrete coefficients alias with degree 32-m, which is far
        // below 1e-12 for exp.
        let g = grid(GridKind::Cgl, 16);
        let s: Vec<f64> = g.nodes().iter().map(|t| t.exp()).collect();
        let c = modal_coefficients(&g, &s).unwrap();
        let (x, w) = crate::poly::gauss_legendre(80);
        for m in 0..=16 {
            let mut a = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                let th = 0.5 * PI * (xi + 1.0);
                a += wi * 0.5 * PI * th.cos().exp() * (m as f64 * th).cos();
            }
            a *= 2.0 / PI;
            if m == 0 {
                a *= 0.5;
            }
            assert!((c.coeffs[m] - a).abs() <= 1e-12, "m={m}: {} vs {a}", c.coeffs[m]);
        }
    }

    #[test]
    fn tail_ratio_of_smooth_and_rough_samples() {
        let g = grid(GridKind::Cgl, 32);
        let smooth: Vec<f64> = g.nodes().iter().map(|t| t.exp()).collect();
        let rough: Vec<f64> = g.nodes().iter().map(|t| t.signum()).collect();
        let a = modal_coefficients(&g, &smooth).unwrap().tail_ratio(0.1);
        let b = modal_coefficients(&g, &rough).unwrap().tail_ratio(0.1);
        assert!(a < 1e-14);
        assert!(b > 1e-3);
    }

    #[test]
    fn sub_basis_weights_follow_from_parent() {
        let g = grid(GridKind::Cgl, 7);
        let b = build_basis(&g).unwrap();
        let sub = b.without_node(0);
        let direct = build_basis(&Grid::from_nodes(g.nodes()[1..].to_vec()).unwrap()).unwrap();
        for j in 0..7 {
            let r = sub.weights()[j] / direct.bary_weights()[j];
            let r0 = sub.weights()[0] / direct.bary_weights()[0];
            assert!((r / r0 - 1.0).abs() < 1e-13);
        }
        let _ = make_grid(GridKind::Cgl, 7, (0.0, 1.0)).unwrap();
    }

    fn kind_strategy() -> impl Strategy<Value = GridKind> {
        prop::sample::select(ALL.to_vec())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn kronecker_property(kind in kind_strategy(), n in 1usize..=512, seed in any::<u64>()) {
            let g = grid(kind, n);
            let b = build_basis(&g).unwrap();
            let s: Vec<f64> = (0..=n).map(|j| ((j as u64 ^ seed) % 1000) as f64 / 500.0 - 1.0).collect();
            let v = interpolate(&b, &s, g.nodes()).unwrap();
            prop_assert_eq!(v, s);
        }

        #[test]
        fn second_derivative_of_affine_vanishes(
            kind in prop::sample::select(vec![GridKind::Cgl, GridKind::Lgl, GridKind::Lgr, GridKind::Cg]), n in 2usize..=64, a in -1.0f64..1.0, c in -1.0f64..1.0,
        ) {
            let g = grid(kind, n);
            let ops = diff_matrix(&build_basis(&g).unwrap());
            let s = DVector::from_iterator(n + 1, g.nodes().iter().map(|t| a * t + c));
            let dd = &ops.d * (&ops.d * s);
            let tol = 1e-10 * (n * n) as f64 * a.abs().max(c.abs());
            prop_assert!(dd.amax() <= tol, "{} > {}", dd.amax(), tol);
        }

        #[test]
        fn differentiation_is_exact_on_polynomials(
            kind in prop::sample::select(vec![GridKind::Cgl, GridKind::Lgl, GridKind::Lgr, GridKind::Cg]),
            n in 1usize..=48,
            coeffs in prop::collection::vec(-1.0f64..1.0, 49),
        ) {
            let g = grid(kind, n);
            let ops = diff_matrix(&build_basis(&g).unwrap());
            // p = Σ c_k T_k, p' evaluated from the Chebyshev derivative recurrence.
            let c = &coeffs[..=n];
            let mut dc = vec![0.0; n + 2];
            for k in (1..=n).rev() {
                dc[k - 1] = dc[k + 1] + 2.0 * k as f64 * c[k];
            }
            dc[0] *= 0.5;
            let p = SpectralCoefficients { coeffs: c.to_vec() };
            let dp = SpectralCoefficients { coeffs: dc[..n.max(1)].to_vec() };
            let s = DVector::from_iterator(n + 1, g.nodes().iter().map(|&t| p.eval(t)));
            let ds = &ops.d * s;
            for (i, &t) in g.nodes().iter().enumerate() {
                let err = (ds[i] - dp.eval(t)).abs();
                prop_assert!(err <= 1e-11 * (n * n) as f64, "i={} err={}", i, err);
            }
        }

        #[test]
        fn modal_round_trip(n in 1usize..=256, coeffs in prop::collection::vec(-1.0f64..1.0, 257)) {
            let g = grid(GridKind::Cgl, n);
            let c = SpectralCoefficients { coeffs: coeffs[..=n].to_vec() };
            let s: Vec<f64> = g.nodes().iter().map(|&t| c.eval(t)).collect();
            let back = modal_coefficients(&g, &s).unwrap();
            for (a, b) in back.coeffs.iter().zip(&c.coeffs) {
                prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
            }
        }
    }
}
