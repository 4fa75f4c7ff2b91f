//! Condition numbers of the collocation test matrices and their growth rates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birkhoff::{build_birkhoff, BirkhoffCase, BirkhoffOperators};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridKind};
use crate::interp::{build_basis, diff_matrix, SpectralOperators};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    /// `D_a`.
    InnerD,
    /// `[D_a, -I]`.
    CLagr,
    /// `[B_a, -I]`.
    CBirk,
    /// `[B_a, -I, b_0]`.
    ABirk,
}

impl MatrixKind {
    pub const ALL: [MatrixKind; 4] = [
        MatrixKind::InnerD,
        MatrixKind::CLagr,
        MatrixKind::CBirk,
        MatrixKind::ABirk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MatrixKind::InnerD => "innerd",
            MatrixKind::CLagr => "clagr",
            MatrixKind::CBirk => "cbirk",
            MatrixKind::ABirk => "abirk",
        }
    }

    fn needs_birkhoff(self) -> bool {
        matches!(self, MatrixKind::CBirk | MatrixKind::ABirk)
    }
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatrixKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "innerd" => Ok(MatrixKind::InnerD),
            "clagr" => Ok(MatrixKind::CLagr),
            "cbirk" => Ok(MatrixKind::CBirk),
            "abirk" => Ok(MatrixKind::ABirk),
            _ => Err(invalid(
                "mats",
                format!("unknown matrix `{s}` (expected innerd, clagr, cbirk or abirk)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondRecord {
    pub grid: GridKind,
    pub n: usize,
    pub matrix: MatrixKind,
    pub kappa: f64,
}

/// Every test matrix drops node 0 (the left endpoint, `-1`) from the inner
/// blocks. On LGR grids this is the Radau endpoint.
pub fn assemble_test_matrix(grid: &Grid, kind: MatrixKind) -> Result<DMatrix<f64>> {
    check_support(grid.kind(), kind)?;
    let basis = build_basis(grid)?;
    let ops = diff_matrix(&basis);
    let birk = if kind.needs_birkhoff() {
        Some(build_birkhoff(&basis, BirkhoffCase::A)?)
    } else {
        None
    };
    Ok(assemble(&ops, birk.as_ref(), kind))
}

fn check_support(grid: GridKind, kind: MatrixKind) -> Result<()> {
    if kind.needs_birkhoff() && matches!(grid, GridKind::Cg | GridKind::Custom) {
        return Err(Error::UnsupportedGrid {
            what: "Birkhoff test matrix",
            grid: grid.to_string(),
            reason: "the value condition needs a node at the left endpoint",
        });
    }
    Ok(())
}

fn assemble(ops: &SpectralOperators, birk: Option<&BirkhoffOperators>, kind: MatrixKind) -> DMatrix<f64> {
    let n = ops.da.nrows();
    let cols = match kind {
        MatrixKind::InnerD => n,
        MatrixKind::CLagr | MatrixKind::CBirk => 2 * n,
        MatrixKind::ABirk => 2 * n + 1,
    };
    let mut m = DMatrix::zeros(n, cols);
    let left = match kind {
        MatrixKind::InnerD | MatrixKind::CLagr => &ops.da,
        _ => &birk.expect("Birkhoff operators").b,
    };
    m.view_mut((0, 0), (n, n)).copy_from(left);
    if kind != MatrixKind::InnerD {
        for i in 0..n {
            m[(i, n + i)] = -1.0;
        }
    }
    if kind == MatrixKind::ABirk {
        let b0 = &birk.expect("Birkhoff operators").boundary_col;
        m.view_mut((0, 2 * n), (n, 1)).copy_from(b0);
    }
    m
}

/// 2-norm condition number `σ_max / σ_min` over the nonzero singular values.
///
/// A square matrix with a zero singular value yields
/// [`Error::SingularSystem`] with an infinite estimate.
pub fn cond2(m: &DMatrix<f64>) -> Result<f64> {
    if m.is_empty() {
        return Err(invalid("matrix", "empty matrix"));
    }
    if let Some(i) = m.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("matrix entry {i}")));
    }
    let sv = m.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return Err(invalid("matrix", "all singular values are zero"));
    }
    let cutoff = smax * f64::EPSILON * m.nrows().max(m.ncols()) as f64;
    let nonzero: Vec<f64> = sv.iter().copied().filter(|&s| s > cutoff).collect();
    if m.is_square() && nonzero.len() < sv.len() {
        return Err(Error::SingularSystem { cond: f64::INFINITY });
    }
    let smin = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(smax / smin)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub grid: GridKind,
    pub matrix: MatrixKind,
    /// `None` when the series was aborted.
    pub slope: Option<f64>,
    /// Set when a non-finite or failed condition number cut the series short.
    pub partial: bool,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub records: Vec<CondRecord>,
    pub fits: Vec<SeriesFit>,
}

/// Condition numbers for every `(grid, matrix, N)` combination plus one
/// fitted growth exponent per `(grid, matrix)` series.
///
/// Work is spread over the current rayon pool; results are ordered by grid,
/// matrix and `N` regardless of scheduling.
pub fn sweep_and_fit(grids: &[GridKind], mats: &[MatrixKind], ns: &[usize]) -> Result<Sweep> {
    if ns.len() < 4 {
        return Err(invalid("N-list", "a slope fit needs at least four orders"));
    }
    if ns.windows(2).any(|p| p[0] >= p[1]) {
        return Err(invalid("N-list", "orders must be strictly increasing"));
    }
    if grids.is_empty() || mats.is_empty() {
        return Err(invalid("grids", "nothing to sweep"));
    }
    for &g in grids {
        for &m in mats {
            check_support(g, m)?;
        }
    }
    let jobs: Vec<(GridKind, usize)> = grids
        .iter()
        .flat_map(|&g| ns.iter().map(move |&n| (g, n)))
        .collect();
    let results: Vec<Vec<(MatrixKind, Result<f64>)>> = jobs
        .par_iter()
        .map(|&(g, n)| condition_numbers(g, n, mats))
        .collect();

    let mut records = Vec::new();
    let mut fits = Vec::new();
    for &g in grids {
        for &m in mats {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut message = None;
            for ((jg, n), res) in jobs.iter().zip(&results) {
                if *jg != g {
                    continue;
                }
                let kappa = res.iter().find(|(k, _)| *k == m).map(|(_, r)| r).expect("requested matrix");
                match kappa {
                    Ok(k) if k.is_finite() => {
                        records.push(CondRecord {
                            grid: g,
                            n: *n,
                            matrix: m,
                            kappa: *k,
                        });
                        xs.push(*n as f64);
                        ys.push(*k);
                    }
                    Ok(k) => {
                        message = Some(format!("non-finite condition number {k} at N = {n}"));
                        break;
                    }
                    Err(e) => {
                        message = Some(format!("N = {n}: {e}"));
                        break;
                    }
                }
            }
            let partial = message.is_some();
            fits.push(SeriesFit {
                grid: g,
                matrix: m,
                slope: (!partial).then(|| loglog_slope(&xs, &ys)),
                partial,
                message,
            });
        }
    }
    Ok(Sweep { records, fits })
}

/// Condition numbers of the requested matrices on one grid, sharing the
/// operator construction.
pub fn condition_numbers(kind: GridKind, n: usize, mats: &[MatrixKind]) -> Vec<(MatrixKind, Result<f64>)> {
    let setup = || -> Result<(SpectralOperators, Option<BirkhoffOperators>)> {
        let basis = build_basis(&Grid::new(kind, n)?)?;
        let ops = diff_matrix(&basis);
        let birk = if mats.iter().any(|m| m.needs_birkhoff()) {
            Some(build_birkhoff(&basis, BirkhoffCase::A)?)
        } else {
            None
        };
        Ok((ops, birk))
    };
    match setup() {
        Ok((ops, birk)) => mats
            .iter()
            .map(|&m| (m, cond2(&assemble(&ops, birk.as_ref(), m))))
            .collect(),
        Err(e) => {
            let msg = e.to_string();
            mats.iter().map(|&m| (m, Err(Error::NonFinite(msg.clone())))).collect()
        }
    }
}
