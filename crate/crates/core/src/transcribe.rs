//! Direct transcription of an [`OcpProblem`] on a Lobatto grid into an
//! [`Nlp`], in the Lagrange form or one of the Birkhoff forms.
//!
//! Every dynamics defect is written as
//!
//! ```text
//! c = σ·(A_X X + A_V V) + κ·G F(X, U)
//! ```
//!
//! with per-node dynamics samples `F`, constant matrices `A_X`, `A_V`, `G`
//! chosen by the variant, and the scalars `(σ, κ)` set by the time scaling:
//! `(1, s)` in canonical time and `(1/s, 1)` in physical time, where
//! `s = (t_f - t_0)/2`. The derivative samples `V` are canonical-time
//! derivatives in both scalings.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birkhoff::{build_birkhoff, BirkhoffCase};
use crate::error::{invalid, Error, Result};
use crate::fd;
use crate::grid::{affine_time, Grid, GridKind};
use crate::interp::{build_basis, diff_matrix};
use crate::linalg::SparseMatrix;
use crate::nlpsolve::Nlp;
use crate::ocp::{dynamics_jacobian, Bounds, OcpProblem, TimeSpec, Trajectory};
use crate::poly::legendre;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodVariant {
    /// `D X = s f(X, U)` at every node.
    #[serde(alias = "lagrange")]
    LagrangePN,
    /// Value at `τ_0`, derivative samples `V` at `τ_1..τ_N`, plus the
    /// boundary row imposing the dynamics at `τ_0`.
    #[serde(alias = "right-precond-a")]
    BirkhoffA,
    /// Mirror of `BirkhoffA` anchored at `τ_N`.
    BirkhoffB,
    /// `BirkhoffA` with `V` eliminated: `X_a = B_a s f - x_0 B_a l_0`.
    LeftPrecondA,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 4] = [
        MethodVariant::LagrangePN,
        MethodVariant::BirkhoffA,
        MethodVariant::BirkhoffB,
        MethodVariant::LeftPrecondA,
    ];

    /// The right-preconditioned form coincides with `BirkhoffA`.
    pub const RIGHT_PRECOND_A: MethodVariant = MethodVariant::BirkhoffA;

    pub fn name(self) -> &'static str {
        match self {
            MethodVariant::LagrangePN => "lagrange",
            MethodVariant::BirkhoffA => "birkhoff-a",
            MethodVariant::BirkhoffB => "birkhoff-b",
            MethodVariant::LeftPrecondA => "left-precond-a",
        }
    }

    /// Whether the decision vector carries derivative samples `V`.
    pub fn has_derivative_vars(self) -> bool {
        matches!(self, MethodVariant::BirkhoffA | MethodVariant::BirkhoffB)
    }

    /// Nodes carrying the derivative samples `V`.
    fn derivative_nodes(self, n: usize) -> Range<usize> {
        match self {
            MethodVariant::BirkhoffB => 0..n,
            _ => 1..n + 1,
        }
    }
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "lagrange" | "lagrange-pn" | "pn" => Ok(MethodVariant::LagrangePN),
            "birkhoff-a" | "a" | "right-precond-a" | "right" => Ok(MethodVariant::BirkhoffA),
            "birkhoff-b" | "b" => Ok(MethodVariant::BirkhoffB),
            "left-precond-a" | "left" => Ok(MethodVariant::LeftPrecondA),
            _ => Err(invalid(
                "method",
                format!("unknown method `{s}` (lagrange, birkhoff-a, birkhoff-b, left-precond-a, right-precond-a)"),
            )),
        }
    }
}

/// Which time axis the defect rows are written in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScaling {
    /// Operators on `[-1, 1]`, dynamics multiplied by `(t_f - t_0)/2`.
    #[default]
    Canonical,
    /// Operators divided by `(t_f - t_0)/2`, dynamics unscaled.
    Physical,
}

/// Positions of `X`, `U`, `V` and `t_f` in the decision vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub order: usize,
    pub nx: usize,
    pub nu: usize,
    /// Number of derivative-sample rows (`N` for Birkhoff variants, else 0).
    pub nv: usize,
    pub free_tf: bool,
}

impl Layout {
    pub fn nodes(&self) -> usize {
        self.order + 1
    }

    pub fn x_range(&self) -> Range<usize> {
        0..self.nodes() * self.nx
    }

    pub fn u_range(&self) -> Range<usize> {
        let s = self.x_range().end;
        s..s + self.nodes() * self.nu
    }

    pub fn v_range(&self) -> Range<usize> {
        let s = self.u_range().end;
        s..s + self.nv * self.nx
    }

    pub fn tf_index(&self) -> Option<usize> {
        self.free_tf.then(|| self.v_range().end)
    }

    pub fn n_vars(&self) -> usize {
        self.v_range().end + usize::from(self.free_tf)
    }

    pub fn x_index(&self, k: usize, i: usize) -> usize {
        k * self.nx + i
    }

    pub fn u_index(&self, k: usize, j: usize) -> usize {
        self.u_range().start + k * self.nu + j
    }

    pub fn v_index(&self, r: usize, i: usize) -> usize {
        self.v_range().start + r * self.nx + i
    }

    /// Assembles a decision vector. `v` must have `nv` rows (or be absent
    /// when `nv == 0`); `tf` is ignored for fixed final time.
    pub fn pack(&self, x: &[Vec<f64>], u: &[Vec<f64>], v: Option<&[Vec<f64>]>, tf: f64) -> Result<Vec<f64>> {
        let rows_ok = |m: &[Vec<f64>], rows: usize, cols: usize| m.len() == rows && m.iter().all(|r| r.len() == cols);
        let v_ok = match v {
            Some(v) => rows_ok(v, self.nv, self.nx),
            None => self.nv == 0,
        };
        if !rows_ok(x, self.nodes(), self.nx) || !rows_ok(u, self.nodes(), self.nu) || !v_ok {
            return Err(Error::ShapeMismatch {
                context: "pack",
                expected: format!(
                    "X {}x{}, U {}x{}, V {}x{}",
                    self.nodes(),
                    self.nx,
                    self.nodes(),
                    self.nu,
                    self.nv,
                    self.nx
                ),
                got: format!("X {} rows, U {} rows, V {:?} rows", x.len(), u.len(), v.map(|v| v.len())),
            });
        }
        let mut z: Vec<f64> = x.iter().flatten().chain(u.iter().flatten()).copied().collect();
        if let Some(v) = v {
            z.extend(v.iter().flatten());
        }
        if self.free_tf {
            z.push(tf);
        }
        Ok(z)
    }

    /// Splits a decision vector into `(X, U, V, t_f)` rows.
    #[allow(clippy::type_complexity)]
    pub fn unpack(&self, z: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Option<Vec<Vec<f64>>>, Option<f64>)> {
        if z.len() != self.n_vars() {
            return Err(Error::ShapeMismatch {
                context: "unpack",
                expected: format!("{} decision variables", self.n_vars()),
                got: z.len().to_string(),
            });
        }
        let rows = |r: Range<usize>, w: usize| -> Vec<Vec<f64>> {
            if w == 0 {
                return vec![Vec::new(); r.len()];
            }
            z[r].chunks(w).map(|c| c.to_vec()).collect()
        };
        let x = rows(self.x_range(), self.nx);
        let u = if self.nu == 0 { vec![Vec::new(); self.nodes()] } else { rows(self.u_range(), self.nu) };
        let v = (self.nv > 0).then(|| rows(self.v_range(), self.nx));
        Ok((x, u, v, self.tf_index().map(|i| z[i])))
    }
}

/// Quadrature weights on `[-1, 1]`: Clenshaw–Curtis on CGL nodes and
/// Gauss–Lobatto on LGL nodes.
pub fn quadrature_weights(grid: &Grid) -> Result<Vec<f64>> {
    let n = grid.order();
    match grid.kind() {
        GridKind::Cgl => Ok(clenshaw_curtis(n)),
        GridKind::Lgl => {
            let nf = n as f64;
            Ok(grid
                .nodes()
                .iter()
                .map(|&x| {
                    let p = legendre(n, x);
                    2.0 / (nf * (nf + 1.0) * p * p)
                })
                .collect())
        }
        k => Err(Error::UnsupportedGrid {
            what: "quadrature weights",
            grid: k.to_string(),
            reason: "weights are defined for CGL (Clenshaw-Curtis) and LGL (Gauss-Lobatto) grids",
        }),
    }
}

fn clenshaw_curtis(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0, 1.0];
    }
    let nf = n as f64;
    let mut w = vec![0.0; n + 1];
    let (end, half) = if n % 2 == 0 { (1.0 / (nf * nf - 1.0), n / 2) } else { (1.0 / (nf * nf), (n - 1) / 2) };
    w[0] = end;
    w[n] = end;
    for (j, wj) in w.iter_mut().enumerate().take(n).skip(1) {
        let theta = std::f64::consts::PI * j as f64 / nf;
        let mut v = 1.0;
        for k in 1..half {
            let kf = k as f64;
            v -= 2.0 * (2.0 * kf * theta).cos() / (4.0 * kf * kf - 1.0);
        }
        let kf = half as f64;
        v -= if n % 2 == 0 {
            (nf * theta).cos() / (nf * nf - 1.0)
        } else {
            2.0 * (2.0 * kf * theta).cos() / (4.0 * kf * kf - 1.0)
        };
        *wj = 2.0 * v / nf;
    }
    w
}

/// An optimal control problem discretized on a grid.
pub struct Transcription<'a> {
    prob: &'a dyn OcpProblem,
    grid: Grid,
    variant: MethodVariant,
    scaling: TimeScaling,
    layout: Layout,
    t0: f64,
    tf_fixed: f64,
    ax: SparseMatrix,
    av: SparseMatrix,
    g: SparseMatrix,
    /// Running-cost weights, present when the problem has a running cost.
    weights: Option<Vec<f64>>,
    jac_pattern: Vec<(usize, usize)>,
    var_bounds: Bounds,
    con_bounds: Bounds,
}

/// Transcribes `prob` on `grid` with canonical time scaling.
pub fn transcribe<'a>(prob: &'a dyn OcpProblem, grid: &Grid, variant: MethodVariant) -> Result<Transcription<'a>> {
    transcribe_with(prob, grid, variant, TimeScaling::Canonical)
}

pub fn transcribe_with<'a>(
    prob: &'a dyn OcpProblem,
    grid: &Grid,
    variant: MethodVariant,
    scaling: TimeScaling,
) -> Result<Transcription<'a>> {
    if !matches!(grid.kind(), GridKind::Cgl | GridKind::Lgl) {
        return Err(Error::UnsupportedGrid {
            what: "optimal control transcription",
            grid: grid.kind().to_string(),
            reason: "finite-horizon problems need a Lobatto grid (CGL or LGL) that carries both endpoints",
        });
    }
    let n = grid.order();
    if n < 2 {
        return Err(invalid("N", "transcription needs N >= 2"));
    }
    let (nx, nu) = (prob.nx(), prob.nu());
    let ts = prob.time_spec();
    let layout = Layout {
        order: n,
        nx,
        nu,
        nv: if variant.has_derivative_vars() { n } else { 0 },
        free_tf: ts.is_free(),
    };
    let (ax, av, g) = defect_matrices(grid, variant)?;
    let weights = if prob.has_running_cost() { Some(quadrature_weights(grid)?) } else { None };

    let xb = prob.state_bounds();
    let ub = prob.control_bounds();
    let mut lower = Vec::with_capacity(layout.n_vars());
    let mut upper = Vec::with_capacity(layout.n_vars());
    for _ in 0..=n {
        lower.extend(&xb.lower);
        upper.extend(&xb.upper);
    }
    for _ in 0..=n {
        lower.extend(&ub.lower);
        upper.extend(&ub.upper);
    }
    lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, layout.nv * nx));
    upper.extend(std::iter::repeat_n(f64::INFINITY, layout.nv * nx));
    if let TimeSpec::FreeFinal { tf_min, tf_max, .. } = ts {
        lower.push(tf_min);
        upper.push(tf_max);
    }

    let n_dyn = ax.nrows() * nx;
    let eb = prob.endpoint_bounds();
    let pb = prob.path_bounds();
    let mut cl = vec![0.0; n_dyn];
    let mut cu = vec![0.0; n_dyn];
    cl.extend(&eb.lower);
    cu.extend(&eb.upper);
    for _ in 0..=n {
        cl.extend(&pb.lower);
        cu.extend(&pb.upper);
    }

    let mut t = Transcription {
        prob,
        grid: grid.clone(),
        variant,
        scaling,
        layout,
        t0: ts.t0(),
        tf_fixed: ts.tf_guess(),
        ax,
        av,
        g,
        weights,
        jac_pattern: Vec::new(),
        var_bounds: Bounds::new(lower, upper),
        con_bounds: Bounds::new(cl, cu),
    };
    t.jac_pattern = t.jacobian_structure();
    Ok(t)
}

/// `(A_X, A_V, G)` with one row per scalar defect of a single state
/// component.
fn defect_matrices(grid: &Grid, variant: MethodVariant) -> Result<(SparseMatrix, SparseMatrix, SparseMatrix)> {
    let n = grid.order();
    let basis = build_basis(grid)?;
    let ops = diff_matrix(&basis);
    let mut ax = SparseMatrix::builder(n + 1);
    let mut av = SparseMatrix::builder(n);
    let mut g = SparseMatrix::builder(n + 1);
    let finish = |ax: &mut crate::linalg::SparseBuilder,
                  av: &mut crate::linalg::SparseBuilder,
                  g: &mut crate::linalg::SparseBuilder| {
        ax.finish_row();
        av.finish_row();
        g.finish_row();
    };
    match variant {
        MethodVariant::LagrangePN => {
            for r in 0..=n {
                for k in 0..=n {
                    ax.push(k, ops.d[(r, k)]);
                }
                g.push(r, -1.0);
                finish(&mut ax, &mut av, &mut g);
            }
        }
        MethodVariant::BirkhoffA | MethodVariant::BirkhoffB => {
            let case = if variant == MethodVariant::BirkhoffA { BirkhoffCase::A } else { BirkhoffCase::B };
            let birk = build_birkhoff(&basis, case)?;
            let (anchor, dnodes) = match case {
                BirkhoffCase::A => (0, 1..n + 1),
                BirkhoffCase::B => (n, 0..n),
            };
            // V = s f at the derivative nodes.
            for (r, k) in dnodes.clone().enumerate() {
                av.push(r, 1.0);
                g.push(k, -1.0);
                finish(&mut ax, &mut av, &mut g);
            }
            // X = x_e b_e + B V at the derivative nodes.
            for (r, k) in dnodes.enumerate() {
                ax.push(k, 1.0);
                ax.push(anchor, -birk.boundary_col[r]);
                for j in 0..n {
                    av.push(j, -birk.b[(r, j)]);
                }
                finish(&mut ax, &mut av, &mut g);
            }
            // Dynamics at the anchor through the derivative of the Birkhoff basis.
            for j in 0..n {
                av.push(j, birk.boundary_row[j]);
            }
            if birk.boundary_dot != 0.0 {
                ax.push(anchor, birk.boundary_dot);
            }
            g.push(anchor, -1.0);
            finish(&mut ax, &mut av, &mut g);
        }
        MethodVariant::LeftPrecondA => {
            let birk = build_birkhoff(&basis, BirkhoffCase::A)?;
            for k in 0..=n {
                ax.push(k, ops.d[(0, k)]);
            }
            g.push(0, -1.0);
            finish(&mut ax, &mut av, &mut g);
            let bl0 = &birk.b * &ops.l0;
            for r in 0..n {
                ax.push(r + 1, 1.0);
                ax.push(0, bl0[r]);
                for j in 0..n {
                    g.push(j + 1, -birk.b[(r, j)]);
                }
                finish(&mut ax, &mut av, &mut g);
            }
        }
    }
    Ok((ax.build(), av.build(), g.build()))
}

/// Scale factors `(σ, κ)` and their first and second `t_f` derivatives.
#[derive(Debug, Clone, Copy)]
struct Scales {
    sigma: f64,
    kappa: f64,
    dsigma: f64,
    d2sigma: f64,
    dkappa: f64,
}

impl<'a> Transcription<'a> {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn variant(&self) -> MethodVariant {
        self.variant
    }

    pub fn scaling(&self) -> TimeScaling {
        self.scaling
    }

    pub fn problem(&self) -> &'a dyn OcpProblem {
        self.prob
    }

    /// Number of dynamics defect rows (all state components).
    pub fn n_dynamics(&self) -> usize {
        self.ax.nrows() * self.layout.nx
    }

    /// `(row, col)` structure of the constraint Jacobian.
    pub fn jacobian_pattern(&self) -> &[(usize, usize)] {
        &self.jac_pattern
    }

    pub fn final_time(&self, z: &[f64]) -> f64 {
        self.layout.tf_index().map_or(self.tf_fixed, |i| z[i])
    }

    fn half_span(&self, tf: f64) -> f64 {
        0.5 * (tf - self.t0)
    }

    fn scales(&self, tf: f64) -> Scales {
        let s = self.half_span(tf);
        match self.scaling {
            TimeScaling::Canonical => Scales {
                sigma: 1.0,
                kappa: s,
                dsigma: 0.0,
                d2sigma: 0.0,
                dkappa: 0.5,
            },
            TimeScaling::Physical => Scales {
                sigma: 1.0 / s,
                kappa: 1.0,
                dsigma: -0.5 / (s * s),
                d2sigma: 0.5 / (s * s * s),
                dkappa: 0.0,
            },
        }
    }

    fn node_time(&self, k: usize, tf: f64) -> f64 {
        affine_time(self.grid.nodes()[k], self.t0, tf)
    }

    fn x_at<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        let nx = self.layout.nx;
        &z[k * nx..(k + 1) * nx]
    }

    fn u_at<'z>(&self, z: &'z [f64], k: usize) -> &'z [f64] {
        let s = self.layout.u_index(k, 0);
        &z[s..s + self.layout.nu]
    }

    /// Decision-vector indices of `(x_k, u_k, t_f)`.
    fn node_indices(&self, k: usize) -> Vec<usize> {
        let l = &self.layout;
        let mut idx: Vec<usize> = (0..l.nx).map(|i| l.x_index(k, i)).collect();
        idx.extend((0..l.nu).map(|j| l.u_index(k, j)));
        idx.extend(l.tf_index());
        idx
    }

    /// Decision-vector indices of `(x_0, x_N, t_f)`.
    fn endpoint_indices(&self) -> Vec<usize> {
        let l = &self.layout;
        let mut idx: Vec<usize> = (0..l.nx).map(|i| l.x_index(0, i)).collect();
        idx.extend((0..l.nx).map(|i| l.x_index(l.order, i)));
        idx.extend(l.tf_index());
        idx
    }

    fn gather(z: &[f64], idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| z[i]).collect()
    }

    /// Splits a node-local vector into `(x, u, t_f)`.
    fn split_node<'l>(&self, local: &'l [f64]) -> (&'l [f64], &'l [f64], f64) {
        let (nx, nu) = (self.layout.nx, self.layout.nu);
        let tf = if self.layout.free_tf { local[nx + nu] } else { self.tf_fixed };
        (&local[..nx], &local[nx..nx + nu], tf)
    }

    fn split_endpoint<'l>(&self, local: &'l [f64]) -> (&'l [f64], &'l [f64], f64) {
        let nx = self.layout.nx;
        let tf = if self.layout.free_tf { local[2 * nx] } else { self.tf_fixed };
        (&local[..nx], &local[nx..2 * nx], tf)
    }

    fn dynamics_samples(&self, z: &[f64], tf: f64) -> Vec<Vec<f64>> {
        let nx = self.layout.nx;
        (0..self.layout.nodes())
            .into_par_iter()
            .map(|k| {
                let mut out = vec![0.0; nx];
                self.prob.dynamics(self.x_at(z, k), self.u_at(z, k), self.node_time(k, tf), &mut out);
                out
            })
            .collect()
    }

    /// `A_X X + A_V V` per defect row and state component.
    fn linear_part(&self, z: &[f64]) -> Vec<f64> {
        let nx = self.layout.nx;
        let mut out = vec![0.0; self.n_dynamics()];
        for r in 0..self.ax.nrows() {
            let row = &mut out[r * nx..(r + 1) * nx];
            for (k, a) in self.ax.row(r) {
                for (i, o) in row.iter_mut().enumerate() {
                    *o += a * z[self.layout.x_index(k, i)];
                }
            }
            for (j, a) in self.av.row(r) {
                for (i, o) in row.iter_mut().enumerate() {
                    *o += a * z[self.layout.v_index(j, i)];
                }
            }
        }
        out
    }

    /// Dynamics defects only.
    pub fn dynamics_defects(&self, z: &[f64]) -> Vec<f64> {
        let tf = self.final_time(z);
        let sc = self.scales(tf);
        let f = self.dynamics_samples(z, tf);
        let nx = self.layout.nx;
        let mut c = self.linear_part(z);
        for (r, row) in c.chunks_mut(nx).enumerate() {
            for v in row.iter_mut() {
                *v *= sc.sigma;
            }
            for (k, gk) in self.g.row(r) {
                for (i, o) in row.iter_mut().enumerate() {
                    *o += sc.kappa * gk * f[k][i];
                }
            }
        }
        c
    }

    /// Decision vector from node samples, with `V` set to the scaled
    /// dynamics at the derivative nodes.
    pub fn point_from_samples(&self, x: &DMatrix<f64>, u: &DMatrix<f64>, tf: f64) -> Result<Vec<f64>> {
        let l = &self.layout;
        if x.shape() != (l.nodes(), l.nx) || u.shape() != (l.nodes(), l.nu) {
            return Err(Error::ShapeMismatch {
                context: "point_from_samples",
                expected: format!("X {}x{}, U {}x{}", l.nodes(), l.nx, l.nodes(), l.nu),
                got: format!("X {:?}, U {:?}", x.shape(), u.shape()),
            });
        }
        let xr: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
        let ur: Vec<Vec<f64>> = u.row_iter().map(|r| r.iter().copied().collect()).collect();
        let v = if l.nv > 0 {
            let s = self.half_span(tf);
            let v: Vec<Vec<f64>> = self
                .variant
                .derivative_nodes(l.order)
                .map(|k| {
                    let mut out = vec![0.0; l.nx];
                    self.prob.dynamics(&xr[k], &ur[k], self.node_time(k, tf), &mut out);
                    out.iter().map(|f| s * f).collect()
                })
                .collect();
            Some(v)
        } else {
            None
        };
        l.pack(&xr, &ur, v.as_deref(), tf)
    }

    /// Starting point from the problem's own guess.
    pub fn initial_point(&self) -> Result<Vec<f64>> {
        let g = self.prob.initial_guess(self.grid.nodes());
        self.point_from_samples(&g.x, &g.u, g.tf)
    }

    /// Reassembles a trajectory from a decision vector.
    pub fn extract_trajectory(&self, z: &[f64]) -> Result<Trajectory> {
        let (x, u, v, tf) = self.layout.unpack(z)?;
        Ok(Trajectory {
            grid: self.grid.clone(),
            x,
            u,
            v,
            t0: self.t0,
            tf: tf.unwrap_or(self.tf_fixed),
            objective: self.objective(z),
        })
    }

    /// `max |X - x_e b_e - B V|` over the reconstruction rows of a Birkhoff
    /// variant, in canonical units. `None` for variants without `V`.
    pub fn reconstruction_residual(&self, z: &[f64]) -> Option<f64> {
        if !self.variant.has_derivative_vars() {
            return None;
        }
        let n = self.layout.order;
        let lin = self.linear_part(z);
        let nx = self.layout.nx;
        Some(lin[n * nx..2 * n * nx].iter().fold(0.0_f64, |m, v| m.max(v.abs())))
    }

    fn jacobian_structure(&self) -> Vec<(usize, usize)> {
        let z: Vec<f64> = self
            .var_bounds
            .lower
            .iter()
            .zip(&self.var_bounds.upper)
            .map(|(&l, &u)| if l.is_finite() { l } else if u.is_finite() { u } else { 1.0 })
            .map(|v| if v == 0.0 { 1.0 } else { v })
            .collect();
        let mut z = z;
        if let Some(i) = self.layout.tf_index() {
            z[i] = self.tf_fixed.max(self.var_bounds.lower[i]);
        }
        self.assemble_jacobian(&z, true).pattern()
    }

    /// Constraint Jacobian; with `structural` every potentially nonzero
    /// entry is stored.
    fn assemble_jacobian(&self, z: &[f64], structural: bool) -> SparseMatrix {
        let l = self.layout;
        let (nx, nu) = (l.nx, l.nu);
        let tf = self.final_time(z);
        let sc = self.scales(tf);
        let lin = self.linear_part(z);
        let nodes = l.nodes();
        let h = 1e-7;
        let blocks: Vec<(DMatrix<f64>, DMatrix<f64>, Vec<f64>, Vec<f64>)> = (0..nodes)
            .into_par_iter()
            .map(|k| {
                let (x, u) = (self.x_at(z, k), self.u_at(z, k));
                let t = self.node_time(k, tf);
                let (jx, ju) = dynamics_jacobian(self.prob, x, u, t);
                let mut f = vec![0.0; nx];
                self.prob.dynamics(x, u, t, &mut f);
                let mut ft = vec![0.0; nx];
                if l.free_tf {
                    let dt = fd::jacobian_step(t).max(h);
                    let (mut fp, mut fm) = (vec![0.0; nx], vec![0.0; nx]);
                    self.prob.dynamics(x, u, t + dt, &mut fp);
                    self.prob.dynamics(x, u, t - dt, &mut fm);
                    for i in 0..nx {
                        ft[i] = (fp[i] - fm[i]) / (2.0 * dt);
                    }
                }
                (jx, ju, f, ft)
            })
            .collect();

        let mut b = SparseMatrix::builder(l.n_vars());
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let keep = |v: f64| structural || v != 0.0;
        let flush = |b: &mut crate::linalg::SparseBuilder, entries: &mut Vec<(usize, f64)>| {
            entries.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            let mut acc = 0.0;
            for &(c, v) in entries.iter() {
                if last == Some(c) {
                    acc += v;
                } else {
                    if let Some(lc) = last {
                        if keep(acc) {
                            b.push(lc, if structural { 1.0 } else { acc });
                        }
                    }
                    last = Some(c);
                    acc = v;
                }
            }
            if let Some(lc) = last {
                if keep(acc) {
                    b.push(lc, if structural { 1.0 } else { acc });
                }
            }
            b.finish_row();
            entries.clear();
        };

        for r in 0..self.ax.nrows() {
            for i in 0..nx {
                for (k, a) in self.ax.row(r) {
                    entries.push((l.x_index(k, i), sc.sigma * a));
                }
                for (j, a) in self.av.row(r) {
                    entries.push((l.v_index(j, i), sc.sigma * a));
                }
                let mut dtf = sc.dsigma * lin[r * nx + i];
                for (k, gk) in self.g.row(r) {
                    let (jx, ju, f, ft) = &blocks[k];
                    let c = sc.kappa * gk;
                    for q in 0..nx {
                        if structural || jx[(i, q)] != 0.0 {
                            entries.push((l.x_index(k, q), c * jx[(i, q)]));
                        }
                    }
                    for q in 0..nu {
                        if structural || ju[(i, q)] != 0.0 {
                            entries.push((l.u_index(k, q), c * ju[(i, q)]));
                        }
                    }
                    let dk = 0.5 * (self.grid.nodes()[k] + 1.0);
                    dtf += gk * (sc.dkappa * f[i] + sc.kappa * ft[i] * dk);
                }
                if let Some(ti) = l.tf_index() {
                    entries.push((ti, dtf));
                }
                flush(&mut b, &mut entries);
            }
        }

        let ne = self.prob.n_endpoint();
        if ne > 0 {
            let idx = self.endpoint_indices();
            let local = Self::gather(z, &idx);
            let je = fd::jacobian(&local, ne, |v, out| {
                let (x0, xf, tf) = self.split_endpoint(v);
                self.prob.endpoint_fn(x0, xf, self.t0, tf, out);
            });
            for r in 0..ne {
                for (c, &gi) in idx.iter().enumerate() {
                    entries.push((gi, je[(r, c)]));
                }
                flush(&mut b, &mut entries);
            }
        }

        let nh = self.prob.n_path();
        if nh > 0 {
            let jh: Vec<(Vec<usize>, DMatrix<f64>)> = (0..nodes)
                .into_par_iter()
                .map(|k| {
                    let idx = self.node_indices(k);
                    let local = Self::gather(z, &idx);
                    let j = fd::jacobian(&local, nh, |v, out| {
                        let (x, u, tf) = self.split_node(v);
                        self.prob.path_fn(x, u, self.node_time(k, tf), out);
                    });
                    (idx, j)
                })
                .collect();
            for (idx, j) in &jh {
                for r in 0..nh {
                    for (c, &gi) in idx.iter().enumerate() {
                        entries.push((gi, j[(r, c)]));
                    }
                    flush(&mut b, &mut entries);
                }
            }
        }
        b.build()
    }

    fn running_cost_at(&self, k: usize, local: &[f64], w: f64) -> f64 {
        let (x, u, tf) = self.split_node(local);
        w * self.half_span(tf) * self.prob.running_cost(x, u, self.node_time(k, tf))
    }
}

impl Nlp for Transcription<'_> {
    fn n_vars(&self) -> usize {
        self.layout.n_vars()
    }

    fn n_cons(&self) -> usize {
        self.con_bounds.len()
    }

    fn var_bounds(&self) -> Bounds {
        self.var_bounds.clone()
    }

    fn con_bounds(&self) -> Bounds {
        self.con_bounds.clone()
    }

    fn objective(&self, z: &[f64]) -> f64 {
        let n = self.layout.order;
        let tf = self.final_time(z);
        let mut j = self.prob.endpoint_cost(self.x_at(z, 0), self.x_at(z, n), self.t0, tf);
        if let Some(w) = &self.weights {
            let s = self.half_span(tf);
            for (k, wk) in w.iter().enumerate() {
                j += s * wk * self.prob.running_cost(self.x_at(z, k), self.u_at(z, k), self.node_time(k, tf));
            }
        }
        j
    }

    fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; z.len()];
        let idx = self.endpoint_indices();
        let ge = fd::gradient(&Self::gather(z, &idx), |v| {
            let (x0, xf, tf) = self.split_endpoint(v);
            self.prob.endpoint_cost(x0, xf, self.t0, tf)
        });
        for (&i, g) in idx.iter().zip(ge) {
            grad[i] += g;
        }
        if let Some(w) = &self.weights {
            for (k, &wk) in w.iter().enumerate() {
                let idx = self.node_indices(k);
                let gk = fd::gradient(&Self::gather(z, &idx), |v| self.running_cost_at(k, v, wk));
                for (&i, g) in idx.iter().zip(gk) {
                    grad[i] += g;
                }
            }
        }
        grad
    }

    fn constraints(&self, z: &[f64], out: &mut [f64]) {
        let n = self.layout.order;
        let tf = self.final_time(z);
        let nd = self.n_dynamics();
        out[..nd].copy_from_slice(&self.dynamics_defects(z));
        let ne = self.prob.n_endpoint();
        self.prob
            .endpoint_fn(self.x_at(z, 0), self.x_at(z, n), self.t0, tf, &mut out[nd..nd + ne]);
        let nh = self.prob.n_path();
        if nh > 0 {
            for k in 0..=n {
                let s = nd + ne + k * nh;
                self.prob
                    .path_fn(self.x_at(z, k), self.u_at(z, k), self.node_time(k, tf), &mut out[s..s + nh]);
            }
        }
    }

    fn jacobian(&self, z: &[f64]) -> SparseMatrix {
        self.assemble_jacobian(z, false)
    }

    fn hessian(&self, z: &[f64], obj_factor: f64, y: &[f64]) -> DMatrix<f64> {
        let l = self.layout;
        let nx = l.nx;
        let n = l.order;
        let tf = self.final_time(z);
        let sc = self.scales(tf);
        let nd = self.n_dynamics();
        let ne = self.prob.n_endpoint();
        let nh = self.prob.n_path();
        let mut hess = DMatrix::zeros(l.n_vars(), l.n_vars());

        // μ_k = Gᵀ y per node.
        let mut mu = vec![vec![0.0; nx]; n + 1];
        for r in 0..self.g.nrows() {
            for (k, gk) in self.g.row(r) {
                for i in 0..nx {
                    mu[k][i] += gk * y[r * nx + i];
                }
            }
        }
        let blocks: Vec<Option<(Vec<usize>, DMatrix<f64>)>> = (0..=n)
            .into_par_iter()
            .map(|k| {
                let yh = &y[nd + ne + k * nh..nd + ne + (k + 1) * nh];
                let wk = self.weights.as_ref().map_or(0.0, |w| w[k] * obj_factor);
                if mu[k].iter().all(|&m| m == 0.0) && yh.iter().all(|&v| v == 0.0) && wk == 0.0 {
                    return None;
                }
                let idx = self.node_indices(k);
                let local = Self::gather(z, &idx);
                let h = fd::hessian(&local, |v| {
                    let (x, u, tf) = self.split_node(v);
                    let t = self.node_time(k, tf);
                    let mut acc = 0.0;
                    if mu[k].iter().any(|&m| m != 0.0) {
                        let mut f = vec![0.0; nx];
                        self.prob.dynamics(x, u, t, &mut f);
                        let kappa = self.scales(tf).kappa;
                        acc += kappa * mu[k].iter().zip(&f).map(|(m, f)| m * f).sum::<f64>();
                    }
                    if nh > 0 {
                        let mut h = vec![0.0; nh];
                        self.prob.path_fn(x, u, t, &mut h);
                        acc += yh.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if wk != 0.0 {
                        acc += self.running_cost_at(k, v, wk);
                    }
                    acc
                });
                Some((idx, h))
            })
            .collect();
        for (idx, h) in blocks.into_iter().flatten() {
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    hess[(ia, ib)] += h[(a, b)];
                }
            }
        }

        let idx = self.endpoint_indices();
        let ye = &y[nd..nd + ne];
        let he = fd::hessian(&Self::gather(z, &idx), |v| {
            let (x0, xf, tf) = self.split_endpoint(v);
            let mut acc = obj_factor * self.prob.endpoint_cost(x0, xf, self.t0, tf);
            if ne > 0 {
                let mut e = vec![0.0; ne];
                self.prob.endpoint_fn(x0, xf, self.t0, tf, &mut e);
                acc += ye.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>();
            }
            acc
        });
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                hess[(ia, ib)] += he[(a, b)];
            }
        }

        // Exact σ(t_f) cross terms of the linear part.
        if let (Some(ti), true) = (l.tf_index(), sc.dsigma != 0.0) {
            let lin = self.linear_part(z);
            let mut tt = 0.0;
            for r in 0..self.ax.nrows() {
                for i in 0..nx {
                    let yr = y[r * nx + i];
                    if yr == 0.0 {
                        continue;
                    }
                    tt += sc.d2sigma * yr * lin[r * nx + i];
                    for (k, a) in self.ax.row(r) {
                        let c = l.x_index(k, i);
                        hess[(ti, c)] += sc.dsigma * yr * a;
                        hess[(c, ti)] += sc.dsigma * yr * a;
                    }
                    for (j, a) in self.av.row(r) {
                        let c = l.v_index(j, i);
                        hess[(ti, c)] += sc.dsigma * yr * a;
                        hess[(c, ti)] += sc.dsigma * yr * a;
                    }
                }
            }
            hess[(ti, ti)] += tt;
        }
        hess
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlpsolve::{kkt_residual, solve, SolveStatus, SolverOptions};
    use crate::ocp::{make_double_integrator, make_orbit_transfer, ScalarRegulator};

    /// Double integrator with a fixed final time of 3 and rest-to-rest
    /// boundary rows, for counting tests.
    struct FixedDi;
    impl OcpProblem for FixedDi {
        fn name(&self) -> &str {
            "fixed-di"
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
        fn endpoint_cost(&self, _: &[f64], _: &[f64], _: f64, _: f64) -> f64 {
            0.0
        }
        fn n_endpoint(&self) -> usize {
            4
        }
        fn endpoint_fn(&self, x0: &[f64], xf: &[f64], _: f64, _: f64, out: &mut [f64]) {
            out[..2].copy_from_slice(x0);
            out[2..].copy_from_slice(xf);
        }
        fn endpoint_bounds(&self) -> Bounds {
            Bounds::equal(vec![0.0, 0.0, 1.0, 0.0])
        }
        fn time_spec(&self) -> TimeSpec {
            TimeSpec::Fixed { t0: 0.0, tf: 3.0 }
        }
    }

    fn cgl(n: usize) -> Grid {
        Grid::new(GridKind::Cgl, n).unwrap()
    }

    #[test]
    fn variable_and_row_counts() {
        let p = FixedDi;
        let t = transcribe(&p, &cgl(8), MethodVariant::LagrangePN).unwrap();
        assert_eq!(t.n_vars(), 27);
        assert_eq!(t.n_dynamics(), 18);
        let b = transcribe(&p, &cgl(8), MethodVariant::BirkhoffA).unwrap();
        assert_eq!(b.n_vars(), 27 + 16);
        // V rows, reconstruction rows, and one boundary row per state.
        assert_eq!(b.n_dynamics(), 16 + 16 + 2);
        let l = transcribe(&p, &cgl(8), MethodVariant::LeftPrecondA).unwrap();
        assert_eq!(l.n_vars(), 27);
        assert_eq!(l.n_dynamics(), 18);
    }

    #[test]
    fn non_lobatto_grids_are_rejected() {
        let p = FixedDi;
        for kind in [GridKind::Lgr, GridKind::Cg, GridKind::Uniform] {
            let g = Grid::new(kind, 8).unwrap();
            let err = transcribe(&p, &g, MethodVariant::BirkhoffA).err().unwrap();
            assert!(matches!(err, Error::UnsupportedGrid { .. }), "{kind}");
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in MethodVariant::ALL {
            assert_eq!(v.name().parse::<MethodVariant>().unwrap(), v);
        }
        assert_eq!("right-precond-a".parse::<MethodVariant>().unwrap(), MethodVariant::BirkhoffA);
        assert_eq!(MethodVariant::RIGHT_PRECOND_A, MethodVariant::BirkhoffA);
        assert!("gauss".parse::<MethodVariant>().is_err());
        let v: MethodVariant = serde_json::from_str("\"right-precond-a\"").unwrap();
        assert_eq!(v, MethodVariant::BirkhoffA);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let p = make_double_integrator();
        let t = transcribe(&p, &cgl(6), MethodVariant::BirkhoffB).unwrap();
        let z: Vec<f64> = (0..t.n_vars()).map(|i| i as f64 * 0.25 - 3.0).collect();
        let (x, u, v, tf) = t.layout().unpack(&z).unwrap();
        let back = t.layout().pack(&x, &u, v.as_deref(), tf.unwrap()).unwrap();
        assert_eq!(back, z);
        assert!(t.layout().unpack(&z[1..]).is_err());
        let traj = t.extract_trajectory(&z).unwrap();
        assert_eq!(traj.tf, *z.last().unwrap());
    }

    #[test]
    fn lobatto_weights() {
        let w = quadrature_weights(&Grid::new(GridKind::Lgl, 2).unwrap()).unwrap();
        for (a, b) in w.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for kind in [GridKind::Cgl, GridKind::Lgl] {
            for n in [1, 2, 3, 7, 16, 33, 128] {
                let g = Grid::new(kind, n).unwrap();
                let w = quadrature_weights(&g).unwrap();
                assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13, "{kind} {n}");
            }
        }
        assert!(quadrature_weights(&Grid::new(GridKind::Lgr, 4).unwrap()).is_err());
    }

    #[test]
    fn clenshaw_curtis_integrates_exp() {
        // Oracle: composite Simpson with 20000 panels.
        let m = 20_000;
        let h = 2.0 / m as f64;
        let simpson: f64 = (0..=m)
            .map(|i| {
                let c = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                c * (-1.0 + i as f64 * h).exp()
            })
            .sum::<f64>()
            * h
            / 3.0;
        let g = cgl(16);
        let w = quadrature_weights(&g).unwrap();
        let q: f64 = w.iter().zip(g.nodes()).map(|(w, x)| w * x.exp()).sum();
        assert!((q - simpson).abs() < 1e-12);
        assert!((q - (1f64.exp() - (-1f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn polynomial_exactness() {
        for kind in [GridKind::Cgl, GridKind::Lgl] {
            let n = 10;
            let g = Grid::new(kind, n).unwrap();
            let w = quadrature_weights(&g).unwrap();
            let deg = if kind == GridKind::Cgl { n } else { 2 * n - 1 };
            for p in 0..=deg {
                let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
                let q: f64 = w.iter().zip(g.nodes()).map(|(w, x)| w * x.powi(p as i32)).sum();
                assert!((q - exact).abs() < 1e-13, "{kind} degree {p}");
            }
        }
    }

    /// Exact solution samples of the fixed-time double integrator with the
    /// minimum-energy control u = 2/3 - 4t/9 on [0, 3].
    fn exact_di(t: &Transcription<'_>) -> Vec<f64> {
        let times: Vec<f64> = t.grid().nodes().iter().map(|&x| affine_time(x, 0.0, 3.0)).collect();
        let x = DMatrix::from_fn(times.len(), 2, |k, i| {
            let s = times[k];
            if i == 0 {
                s * s / 3.0 - 2.0 * s * s * s / 27.0
            } else {
                2.0 * s / 3.0 - 2.0 * s * s / 9.0
            }
        });
        let u = DMatrix::from_fn(times.len(), 1, |k, _| 2.0 / 3.0 - 4.0 * times[k] / 9.0);
        t.point_from_samples(&x, &u, 3.0).unwrap()
    }

    #[test]
    fn exact_polynomial_solution_is_feasible_for_every_variant() {
        let p = FixedDi;
        for v in MethodVariant::ALL {
            for kind in [GridKind::Cgl, GridKind::Lgl] {
                let g = Grid::new(kind, 12).unwrap();
                let t = transcribe(&p, &g, v).unwrap();
                let z = exact_di(&t);
                let mut c = vec![0.0; t.n_cons()];
                t.constraints(&z, &mut c);
                let worst = c.iter().zip(&t.con_bounds().lower).fold(0.0_f64, |m, (c, l)| m.max((c - l).abs()));
                assert!(worst < 1e-12, "{v} {kind}: {worst}");
                if let Some(r) = t.reconstruction_residual(&z) {
                    assert!(r < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = make_double_integrator();
        let reg = ScalarRegulator { x0: 1.0, horizon: 1.5 };
        let orbit = make_orbit_transfer(0.01, 6.0).unwrap();
        let probs: [&dyn OcpProblem; 3] = [&p, &reg, &orbit];
        for prob in probs {
            for v in MethodVariant::ALL {
                for scaling in [TimeScaling::Canonical, TimeScaling::Physical] {
                    let t = transcribe_with(prob, &cgl(6), v, scaling).unwrap();
                    let z: Vec<f64> = (0..t.n_vars())
                        .map(|i| 0.3 + 0.1 * ((i * 7) % 11) as f64)
                        .collect();
                    let j = t.jacobian(&z).to_dense();
                    let f = fd::jacobian(&z, t.n_cons(), |z, out| t.constraints(z, out));
                    let err = (&j - &f).abs().max();
                    assert!(err < 1e-7 * (1.0 + f.abs().max()), "{} {v} {scaling:?}: {err}", prob.name());
                    let pat = t.jacobian_pattern();
                    for (r, c) in t.jacobian(&z).pattern() {
                        assert!(pat.contains(&(r, c)));
                    }
                }
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let reg = ScalarRegulator { x0: 1.0, horizon: 1.5 };
        let p = make_double_integrator();
        let orbit = make_orbit_transfer(0.01, 6.0).unwrap();
        let probs: [&dyn OcpProblem; 3] = [&p, &reg, &orbit];
        for prob in probs {
            for scaling in [TimeScaling::Canonical, TimeScaling::Physical] {
                let t = transcribe_with(prob, &cgl(5), MethodVariant::BirkhoffA, scaling).unwrap();
                let z: Vec<f64> = (0..t.n_vars()).map(|i| 0.5 + 0.05 * i as f64).collect();
                let y: Vec<f64> = (0..t.n_cons()).map(|i| ((i % 5) as f64 - 2.0) * 0.3).collect();
                let h = t.hessian(&z, 0.7, &y);
                let lag = |z: &[f64], out: &mut [f64]| {
                    let mut g = t.gradient(z);
                    g.iter_mut().for_each(|v| *v *= 0.7);
                    t.jacobian(z).tr_mul_vec_add(&y, &mut g);
                    out.copy_from_slice(&g);
                };
                let f = fd::jacobian(&z, t.n_vars(), lag);
                let err = (&h - &f).abs().max();
                assert!(err < 1e-5 * (1.0 + f.abs().max()), "{} {scaling:?}: {err}", prob.name());
            }
        }
    }

    fn solve_di(v: MethodVariant, scaling: TimeScaling, n: usize) -> (f64, f64, SolveStatus) {
        let p = make_double_integrator();
        let t = transcribe_with(&p, &cgl(n), v, scaling).unwrap();
        let z0 = t.initial_point().unwrap();
        let s = solve(&t, &SolverOptions::default(), &z0).unwrap();
        let k = kkt_residual(&t, &s.x, &s.multipliers).unwrap();
        if s.status == SolveStatus::Optimal {
            assert!(k.feasibility <= 1e-8 && k.stationarity <= 1e-6);
        }
        (t.final_time(&s.x), s.objective, s.status)
    }

    #[test]
    fn double_integrator_minimum_time() {
        // Bang-bang controls limit the polynomial discretization to an
        // algebraic rate, so the discrete optimum sits slightly above 2 and
        // approaches it as N grows.
        let mut tfs = Vec::new();
        for v in MethodVariant::ALL {
            let (tf, _, status) = solve_di(v, TimeScaling::Canonical, 32);
            assert_eq!(status, SolveStatus::Optimal, "{v}");
            assert!(tf > 2.0 && tf - 2.0 <= 2.5e-3, "{v}: tf = {tf}");
            tfs.push(tf);
        }
        for tf in &tfs {
            assert!((tf - tfs[0]).abs() <= 1e-5);
        }
        let coarse = solve_di(MethodVariant::BirkhoffA, TimeScaling::Canonical, 16).0;
        let fine = solve_di(MethodVariant::BirkhoffA, TimeScaling::Canonical, 64).0;
        assert!(fine - 2.0 < 0.5 * (tfs[1] - 2.0) && tfs[1] - 2.0 < 0.5 * (coarse - 2.0));
    }

    #[test]
    fn time_scalings_agree() {
        // t_f moves with the constraint violation, so both solves run at a
        // feasibility tolerance well below the comparison tolerance.
        let p = make_double_integrator();
        let tight = SolverOptions {
            tol_feas: 1e-11,
            ..Default::default()
        };
        let [a, b] = [TimeScaling::Canonical, TimeScaling::Physical].map(|scaling| {
            let t = transcribe_with(&p, &cgl(16), MethodVariant::BirkhoffA, scaling).unwrap();
            let s = solve(&t, &tight, &t.initial_point().unwrap()).unwrap();
            assert_eq!(s.status, SolveStatus::Optimal, "{scaling:?}");
            t.final_time(&s.x)
        });
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn eliminating_v_gives_a_left_preconditioned_point() {
        let p = make_double_integrator();
        let g = cgl(16);
        let ta = transcribe(&p, &g, MethodVariant::BirkhoffA).unwrap();
        let tl = transcribe(&p, &g, MethodVariant::LeftPrecondA).unwrap();
        let tight = SolverOptions {
            tol_feas: 1e-11,
            ..Default::default()
        };
        let sa = solve(&ta, &tight, &ta.initial_point().unwrap()).unwrap();
        let sl = solve(&tl, &SolverOptions::default(), &tl.initial_point().unwrap()).unwrap();
        assert_eq!(sa.status, SolveStatus::Optimal);
        assert_eq!(sl.status, SolveStatus::Optimal);
        let la = ta.layout();
        let mut z = sa.x[..la.v_range().start].to_vec();
        z.push(ta.final_time(&sa.x));
        let mut c = vec![0.0; tl.n_cons()];
        tl.constraints(&z, &mut c);
        let cb = tl.con_bounds();
        let worst = c
            .iter()
            .enumerate()
            .fold(0.0_f64, |m, (i, &v)| m.max((v - v.clamp(cb.lower[i], cb.upper[i])).abs()));
        assert!(worst <= 1e-8, "{worst}");
        assert!((sa.objective - sl.objective).abs() <= 10.0 * 1e-6);
    }
}
