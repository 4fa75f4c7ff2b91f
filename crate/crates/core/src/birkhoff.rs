//! Birkhoff integration operators: one endpoint value plus derivative values
//! at the remaining nodes.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::interp::{LagrangeBasis, NodalBasis, SpectralOperators};
use crate::linalg::{compensated_dot, exact_dot};
use crate::poly::gauss_legendre;

/// Which endpoint carries the function value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BirkhoffCase {
    /// Value at `τ_0`, derivatives at `τ_1..τ_N`.
    A,
    /// Value at `τ_N`, derivatives at `τ_0..τ_{N-1}`.
    B,
}

impl fmt::Display for BirkhoffCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BirkhoffCase::A => "a",
            BirkhoffCase::B => "b",
        })
    }
}

impl FromStr for BirkhoffCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Ok(BirkhoffCase::A),
            "b" => Ok(BirkhoffCase::B),
            _ => Err(invalid("case", format!("expected `a` or `b`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirkhoffOperators {
    pub case: BirkhoffCase,
    /// `N×N` matrix of Birkhoff basis values at the derivative nodes.
    pub b: DMatrix<f64>,
    /// Coefficient of the endpoint value at the derivative nodes (all ones).
    pub boundary_col: DVector<f64>,
    /// Derivative basis evaluated at the value node.
    pub boundary_row: DVector<f64>,
    /// Derivative of the endpoint basis function at the value node (zero).
    pub boundary_dot: f64,
}

/// Builds the case-A or case-B Birkhoff operators by Gauss–Legendre
/// quadrature of the sub-grid Lagrange basis, row by row.
pub fn build_birkhoff(basis: &LagrangeBasis, case: BirkhoffCase) -> Result<BirkhoffOperators> {
    let n = basis.order();
    let nodes = basis.grid().nodes();
    if n < 1 {
        return Err(invalid("N", "Birkhoff operators need at least two nodes"));
    }
    let (drop, anchor) = match case {
        BirkhoffCase::A => (0, nodes[0]),
        BirkhoffCase::B => (n, nodes[n]),
    };
    let sub = basis.without_node(drop);
    let (gx, gw) = gauss_legendre((n + 1).div_ceil(2) + 1);
    let mut b = DMatrix::zeros(n, n);
    for r in 0..n {
        // Case A row r is the integral from τ_0 to τ_{r+1};
        // case B row r is minus the integral from τ_r to τ_N.
        let (lo, hi, sign) = match case {
            BirkhoffCase::A => (anchor, nodes[r + 1], 1.0),
            BirkhoffCase::B => (nodes[r], anchor, -1.0),
        };
        let row = integrate_basis(&sub, lo, hi, &gx, &gw);
        for (j, v) in row.into_iter().enumerate() {
            b[(r, j)] = sign * v;
        }
    }
    let boundary_row = DVector::from_vec(sub.basis_values(anchor));
    Ok(BirkhoffOperators {
        case,
        b,
        boundary_col: DVector::from_element(n, 1.0),
        boundary_row,
        boundary_dot: 0.0,
    })
}

fn integrate_basis(sub: &NodalBasis, lo: f64, hi: f64, gx: &[f64], gw: &[f64]) -> Vec<f64> {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut acc = vec![0.0; sub.nodes().len()];
    for (&x, &w) in gx.iter().zip(gw) {
        let vals = sub.basis_values(mid + half * x);
        for (a, v) in acc.iter_mut().zip(vals) {
            *a += w * v;
        }
    }
    acc.iter_mut().for_each(|a| *a *= half);
    acc
}

impl BirkhoffOperators {
    pub fn order(&self) -> usize {
        self.b.nrows()
    }

    /// Node values `[x_0; x_0·b_0 + B v]` (case A) or `[x_N·b_N + B v; x_N]`
    /// (case B) for a scalar function with endpoint value `xe` and
    /// derivative samples `v`.
    pub fn reconstruct(&self, xe: f64, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.order();
        if v.len() != n {
            return Err(Error::ShapeMismatch {
                context: "reconstruct",
                expected: format!("{n} derivative samples"),
                got: v.len().to_string(),
            });
        }
        let inner = (0..n).map(|i| xe * self.boundary_col[i] + exact_dot(self.b.row(i).transpose().as_slice(), v));
        Ok(match self.case {
            BirkhoffCase::A => std::iter::once(xe).chain(inner).collect(),
            BirkhoffCase::B => inner.chain(std::iter::once(xe)).collect(),
        })
    }
}

fn check_shapes(ops: &SpectralOperators, birk: &BirkhoffOperators) -> Result<()> {
    if ops.da.nrows() != birk.order() {
        return Err(Error::ShapeMismatch {
            context: "Birkhoff identity",
            expected: format!("{0}x{0} operators", ops.da.nrows()),
            got: format!("{0}x{0}", birk.order()),
        });
    }
    Ok(())
}

/// `max |D_ω B_ω - I|` with `D_ω` the inner block matching the case.
pub fn theorem1_residual(ops: &SpectralOperators, birk: &BirkhoffOperators) -> Result<f64> {
    check_shapes(ops, birk)?;
    let d = match birk.case {
        BirkhoffCase::A => &ops.da,
        BirkhoffCase::B => &ops.db,
    };
    let n = birk.order();
    let mut worst = 0.0_f64;
    for i in 0..n {
        let di: Vec<f64> = d.row(i).iter().copied().collect();
        for j in 0..n {
            let v = compensated_dot(&di, birk.b.column(j).as_slice());
            let delta = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - delta).abs());
        }
    }
    Ok(worst)
}

/// Mismatch between the Lagrange and Birkhoff derivatives at the value node
/// for the interpolant reconstructed from `(xe, v)`.
pub fn proposition1_residual(
    ops: &SpectralOperators,
    birk: &BirkhoffOperators,
    xe: f64,
    v: &[f64],
) -> Result<f64> {
    check_shapes(ops, birk)?;
    let x = birk.reconstruct(xe, v)?;
    let n = birk.order();
    let row = match birk.case {
        BirkhoffCase::A => 0,
        BirkhoffCase::B => n,
    };
    let lagrange = exact_dot(ops.d.row(row).transpose().as_slice(), &x);
    let birkhoff = xe * birk.boundary_dot + exact_dot(birk.boundary_row.as_slice(), v);
    Ok((lagrange - birkhoff).abs())
}

/// `‖D_a b_0 + l_0‖_∞` (case A) or `‖D_b b_N + l_N‖_∞` (case B).
pub fn proposition2_residual(ops: &SpectralOperators, birk: &BirkhoffOperators) -> Result<f64> {
    check_shapes(ops, birk)?;
    let (d, l) = match birk.case {
        BirkhoffCase::A => (&ops.da, &ops.l0),
        BirkhoffCase::B => (&ops.db, &ops.ln),
    };
    let mut worst = 0.0_f64;
    for i in 0..birk.order() {
        let mut row: Vec<f64> = d.row(i).iter().copied().collect();
        let mut col: Vec<f64> = birk.boundary_col.iter().copied().collect();
        row.push(l[i]);
        col.push(1.0);
        worst = worst.max(exact_dot(&row, &col).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, GridKind};
    use crate::interp::{build_basis, diff_matrix};
    use proptest::prelude::*;

    fn setup(kind: GridKind, n: usize, case: BirkhoffCase) -> (SpectralOperators, BirkhoffOperators) {
        let basis = build_basis(&Grid::new(kind, n).unwrap()).unwrap();
        (diff_matrix(&basis), build_birkhoff(&basis, case).unwrap())
    }

    #[test]
    fn two_point_operators() {
        let (ops, a) = setup(GridKind::Cgl, 1, BirkhoffCase::A);
        assert_eq!(a.b.as_slice(), &[2.0]);
        assert_eq!(a.boundary_col.as_slice(), &[1.0]);
        assert_eq!(a.boundary_row.as_slice(), &[1.0]);
        assert_eq!(a.boundary_dot, 0.0);
        assert_eq!(theorem1_residual(&ops, &a).unwrap(), 0.0);
        let (_, b) = setup(GridKind::Cgl, 1, BirkhoffCase::B);
        assert_eq!(b.b.as_slice(), &[-2.0]);
    }

    #[test]
    fn boundary_row_matches_weight_ratio() {
        // The sub-grid basis at τ_0 equals -w_j / w_0 for the full-grid weights.
        for kind in [GridKind::Cgl, GridKind::Lgl, GridKind::Uniform] {
            let basis = build_basis(&Grid::new(kind, 12).unwrap()).unwrap();
            let a = build_birkhoff(&basis, BirkhoffCase::A).unwrap();
            let w = basis.bary_weights();
            for j in 0..12 {
                let want = -w[j + 1] / w[0];
                assert!((a.boundary_row[j] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn identity_on_moderate_grids() {
        let (ops, a) = setup(GridKind::Cgl, 32, BirkhoffCase::A);
        assert!(theorem1_residual(&ops, &a).unwrap() <= 1e-11);
        let (ops, b) = setup(GridKind::Lgl, 64, BirkhoffCase::B);
        assert!(theorem1_residual(&ops, &b).unwrap() <= 1e-10);
        let (ops2, _) = setup(GridKind::Cgl, 8, BirkhoffCase::A);
        assert!(theorem1_residual(&ops2, &a).is_err());
    }

    #[test]
    fn entries_match_adaptive_quadrature() {
        // Adaptive Simpson on the product-form sub-grid basis as an independent oracle.
        fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (l, r) = (
                (m - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + m)) + f(m)),
                (b - m) / 6.0 * (f(m) + 4.0 * f(0.5 * (m + b)) + f(b)),
            );
            if depth == 0 || (l + r - whole).abs() <= 15.0 * tol {
                return l + r + (l + r - whole) / 15.0;
            }
            simpson(f, a, m, l, 0.5 * tol, depth - 1) + simpson(f, m, b, r, 0.5 * tol, depth - 1)
        }
        let n = 8;
        let g = Grid::new(GridKind::Cgl, n).unwrap();
        let t = g.nodes().to_vec();
        let basis = build_basis(&g).unwrap();
        let a = build_birkhoff(&basis, BirkhoffCase::A).unwrap();
        let b = build_birkhoff(&basis, BirkhoffCase::B).unwrap();
        for j in 0..n {
            let ta = t.clone();
            let la = move |x: f64| {
                (1..=n).filter(|&k| k != j + 1).map(|k| (x - ta[k]) / (ta[j + 1] - ta[k])).product::<f64>()
            };
            let tb = t.clone();
            let lb = move |x: f64| {
                (0..n).filter(|&k| k != j).map(|k| (x - tb[k]) / (tb[j] - tb[k])).product::<f64>()
            };
            for i in 0..n {
                let (lo, hi) = (t[0], t[i + 1]);
                let whole = (hi - lo) / 6.0 * (la(lo) + 4.0 * la(0.5 * (lo + hi)) + la(hi));
                let want = simpson(&la, lo, hi, whole, 1e-15, 40);
                assert!((a.b[(i, j)] - want).abs() <= 1e-12, "A ({i},{j})");
                let (lo, hi) = (t[i], t[n]);
                let whole = (hi - lo) / 6.0 * (lb(lo) + 4.0 * lb(0.5 * (lo + hi)) + lb(hi));
                let want = -simpson(&lb, lo, hi, whole, 1e-15, 40);
                assert!((b.b[(i, j)] - want).abs() <= 1e-12, "B ({i},{j})");
            }
        }
    }

    #[test]
    fn reconstruction_reproduces_polynomials() {
        // x(τ) = τ^5 - 2τ^2 + 3, degree ≤ N for N ≥ 5.
        let p = |t: f64| t.powi(5) - 2.0 * t * t + 3.0;
        let dp = |t: f64| 5.0 * t.powi(4) - 4.0 * t;
        for kind in [GridKind::Cgl, GridKind::Lgl] {
            for n in [5, 9, 40] {
                let g = Grid::new(kind, n).unwrap();
                let basis = build_basis(&g).unwrap();
                let t = g.nodes();
                let a = build_birkhoff(&basis, BirkhoffCase::A).unwrap();
                let v: Vec<f64> = t[1..].iter().map(|&s| dp(s)).collect();
                let x = a.reconstruct(p(t[0]), &v).unwrap();
                for (i, &s) in t.iter().enumerate() {
                    assert!((x[i] - p(s)).abs() <= 1e-10, "{kind} {n} A {i}");
                }
                let b = build_birkhoff(&basis, BirkhoffCase::B).unwrap();
                let v: Vec<f64> = t[..n].iter().map(|&s| dp(s)).collect();
                let x = b.reconstruct(p(t[n]), &v).unwrap();
                for (i, &s) in t.iter().enumerate() {
                    assert!((x[i] - p(s)).abs() <= 1e-10, "{kind} {n} B {i}");
                }
            }
        }
    }

    #[test]
    fn endpoint_function_is_constant_one() {
        let (ops, a) = setup(GridKind::Lgl, 20, BirkhoffCase::A);
        assert!(a.boundary_col.iter().all(|&v| v == 1.0));
        assert_eq!(a.boundary_dot, 0.0);
        assert!(proposition2_residual(&ops, &a).unwrap() <= 1e-10 * 20.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn proposition1_on_lobatto_grids(
            kind in prop::sample::select(vec![GridKind::Cgl, GridKind::Lgl]),
            n in 1usize..=128,
            x0 in -1.0f64..1.0,
            v in prop::collection::vec(-1.0f64..1.0, 128),
        ) {
            let (ops, a) = setup(kind, n, BirkhoffCase::A);
            let r = proposition1_residual(&ops, &a, x0, &v[..n]).unwrap();
            prop_assert!(r <= 1e-9 * n as f64, "residual {}", r);
        }

        #[test]
        fn proposition2_on_lobatto_grids(
            kind in prop::sample::select(vec![GridKind::Cgl, GridKind::Lgl]),
            n in 1usize..=256,
        ) {
            let (ops, a) = setup(kind, n, BirkhoffCase::A);
            let r = proposition2_residual(&ops, &a).unwrap();
            prop_assert!(r <= 1e-10 * n as f64, "residual {}", r);
        }

        // Equispaced differentiation entries grow like 2^N, so the rounding of
        // the stored matrix alone exceeds the bound somewhere past N = 64.
        #[test]
        fn proposition2_on_small_uniform_grids(n in 1usize..=64) {
            let (ops, a) = setup(GridKind::Uniform, n, BirkhoffCase::A);
            let r = proposition2_residual(&ops, &a).unwrap();
            prop_assert!(r <= 1e-10 * n as f64, "residual {}", r);
        }
    }
}
