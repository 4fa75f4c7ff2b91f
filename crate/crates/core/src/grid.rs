//! Collocation grids on `[-1, 1]` and their affine image on a physical time
//! interval.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::poly::legendre_with_derivative;

/// Node family of a [`Grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Chebyshev–Gauss–Lobatto: `τ_i = -cos(iπ/N)`.
    Cgl,
    /// Legendre–Gauss–Lobatto: `±1` and the roots of `P_N'`.
    Lgl,
    /// Legendre–Gauss–Radau: `N+1` roots of `P_N + P_{N+1}`, including `-1`.
    Lgr,
    /// Chebyshev–Gauss: `N+1` roots of `T_{N+1}`, no endpoints.
    Cg,
    /// Equispaced nodes including both endpoints.
    Uniform,
    /// Caller-supplied strictly increasing nodes.
    Custom,
}

impl GridKind {
    pub fn is_lobatto(self) -> bool {
        matches!(self, GridKind::Cgl | GridKind::Lgl)
    }

    pub fn name(self) -> &'static str {
        match self {
            GridKind::Cgl => "cgl",
            GridKind::Lgl => "lgl",
            GridKind::Lgr => "lgr",
            GridKind::Cg => "cg",
            GridKind::Uniform => "uniform",
            GridKind::Custom => "custom",
        }
    }
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cgl" => Ok(GridKind::Cgl),
            "lgl" => Ok(GridKind::Lgl),
            "lgr" => Ok(GridKind::Lgr),
            "cg" => Ok(GridKind::Cg),
            "uniform" => Ok(GridKind::Uniform),
            other => Err(invalid(
                "kind",
                format!("unknown grid family `{other}` (expected cgl, lgl, lgr, cg or uniform)"),
            )),
        }
    }
}

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// Ordered collocation nodes `-1 ≤ τ_0 < … < τ_N ≤ 1` with a time domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    kind: GridKind,
    order: usize,
    nodes: Vec<f64>,
    domain: (f64, f64),
}

/// Builds a grid of the given family and order on `domain`.
pub fn make_grid(kind: GridKind, order: usize, domain: (f64, f64)) -> Result<Grid> {
    Grid::new(kind, order)?.with_domain(domain)
}

impl Grid {
    /// Grid of order `N` (N+1 nodes) on the canonical domain `[-1, 1]`.
    pub fn new(kind: GridKind, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("N", "grid order must be at least 1"));
        }
        let nodes = match kind {
            GridKind::Cgl => cgl_nodes(order),
            GridKind::Lgl => lgl_nodes(order),
            GridKind::Lgr => lgr_nodes(order),
            GridKind::Cg => cg_nodes(order),
            GridKind::Uniform => uniform_nodes(order),
            GridKind::Custom => {
                return Err(invalid("kind", "custom grids are built with Grid::from_nodes"))
            }
        };
        let grid = Grid {
            kind,
            order,
            nodes,
            domain: (-1.0, 1.0),
        };
        grid.check_nodes()?;
        Ok(grid)
    }

    /// Arbitrary grid from strictly increasing nodes inside `[-1, 1]`.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(invalid("nodes", "a grid needs at least two nodes"));
        }
        let grid = Grid {
            kind: GridKind::Custom,
            order: nodes.len() - 1,
            nodes,
            domain: (-1.0, 1.0),
        };
        grid.check_nodes()?;
        Ok(grid)
    }

    /// Same nodes mapped onto `[t0, tf]`.
    pub fn with_domain(mut self, domain: (f64, f64)) -> Result<Self> {
        let (t0, tf) = domain;
        if !t0.is_finite() {
            return Err(invalid("t0", format!("domain start must be finite, got {t0}")));
        }
        if !tf.is_finite() {
            return Err(invalid("tf", format!("domain end must be finite, got {tf}")));
        }
        if tf <= t0 {
            return Err(invalid("tf", format!("need tf > t0, got t0={t0}, tf={tf}")));
        }
        self.domain = domain;
        Ok(self)
    }

    fn check_nodes(&self) -> Result<()> {
        for (i, &t) in self.nodes.iter().enumerate() {
            if !t.is_finite() || !(-1.0..=1.0).contains(&t) {
                return Err(invalid("nodes", format!("node {i} = {t} is outside [-1, 1]")));
            }
        }
        for i in 1..self.nodes.len() {
            if self.nodes[i] == self.nodes[i - 1] {
                return Err(Error::DuplicateNodes { i: i - 1, j: i });
            }
            if self.nodes[i] < self.nodes[i - 1] {
                return Err(invalid("nodes", format!("nodes not increasing at index {i}")));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    /// The order `N`; the grid holds `N + 1` nodes.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// `τ_i - τ_j`, evaluated without cancellation for Chebyshev families.
    pub fn node_difference(&self, i: usize, j: usize) -> f64 {
        let n = self.order as f64;
        match self.kind {
            GridKind::Cgl => {
                let (a, b) = (i as f64, j as f64);
                2.0 * ((a + b) * PI / (2.0 * n)).sin() * ((a - b) * PI / (2.0 * n)).sin()
            }
            GridKind::Cg => {
                // τ_i = -cos((2i+1)π/(2N+2))
                let (a, b) = ((2 * i + 1) as f64, (2 * j + 1) as f64);
                let m = 4.0 * (n + 1.0);
                2.0 * ((a + b) * PI / m).sin() * ((a - b) * PI / m).sin()
            }
            _ => self.nodes[i] - self.nodes[j],
        }
    }

    /// Affine image of the nodes on the grid's domain. Lobatto endpoints map
    /// exactly onto `t0` and `tf`.
    pub fn to_physical_time(&self) -> Vec<f64> {
        let (t0, tf) = self.domain;
        self.nodes.iter().map(|&tau| affine_time(tau, t0, tf)).collect()
    }
}

/// Maps `τ ∈ [-1, 1]` onto `[t0, tf]`, hitting the endpoints exactly.
pub fn affine_time(tau: f64, t0: f64, tf: f64) -> f64 {
    if tau == -1.0 {
        t0
    } else if tau == 1.0 {
        tf
    } else {
        0.5 * (tf + t0) + 0.5 * (tf - t0) * tau
    }
}

/// Inverse of [`affine_time`].
pub fn canonical_time(t: f64, t0: f64, tf: f64) -> f64 {
    if t == t0 {
        -1.0
    } else if t == tf {
        1.0
    } else {
        (2.0 * t - (tf + t0)) / (tf - t0)
    }
}

fn cgl_nodes(n: usize) -> Vec<f64> {
    // -cos(iπ/N) written as sin(π(2i-N)/(2N)) so that the set is exactly symmetric.
    let nf = n as f64;
    let mut nodes: Vec<f64> = (0..=n)
        .map(|i| (PI * (2.0 * i as f64 - nf) / (2.0 * nf)).sin())
        .collect();
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    nodes
}

fn cg_nodes(n: usize) -> Vec<f64> {
    let m = (n + 1) as f64;
    (0..=n)
        .map(|i| (PI * (2.0 * i as f64 + 1.0 - m) / (2.0 * m)).sin())
        .collect()
}

fn uniform_nodes(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut nodes: Vec<f64> = (0..=n).map(|i| (2.0 * i as f64 - nf) / nf).collect();
    nodes[0] = -1.0;
    nodes[n] = 1.0;
    nodes
}

fn lgl_nodes(n: usize) -> Vec<f64> {
    let mut nodes = cgl_nodes(n);
    if n == 1 {
        return nodes;
    }
    let c = (n * (n + 1)) as f64;
    // Newton on x·P_N - P_{N-1}, whose interior roots are those of P_N'.
    for j in 1..=n / 2 {
        let mut x = nodes[j];
        for _ in 0..NEWTON_MAX_ITER {
            let (p, dp) = legendre_with_derivative(n, x);
            let step = (1.0 - x * x) * dp / (c * p);
            x += step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        nodes[j] = x;
    }
    for j in 1..=n / 2 {
        nodes[n - j] = -nodes[j];
    }
    if n % 2 == 0 {
        nodes[n / 2] = 0.0;
    }
    nodes
}

fn lgr_nodes(n: usize) -> Vec<f64> {
    // N+1 roots of P_N + P_{N+1}, seeded at Chebyshev–Gauss–Radau points.
    let denom = (2 * n + 1) as f64;
    let mut nodes: Vec<f64> = (0..=n)
        .map(|j| -(2.0 * PI * j as f64 / denom).cos())
        .collect();
    nodes[0] = -1.0;
    for x in nodes.iter_mut().skip(1) {
        let mut y = *x;
        for _ in 0..NEWTON_MAX_ITER {
            let (pa, da) = legendre_with_derivative(n, y);
            let (pb, db) = legendre_with_derivative(n + 1, y);
            let step = (pa + pb) / (da + db);
            y -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        *x = y;
    }
    nodes
}
