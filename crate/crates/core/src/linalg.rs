//! Small numerical building blocks shared by the operator and solver modules:
//! correctly rounded summation and a row-compressed sparse matrix.

use nalgebra::DMatrix;

/// Correctly rounded sum of `values` (Shewchuk's partials algorithm).
///
/// Falls back to naive summation when a non-finite value is present.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    let mut special = 0.0;
    let mut has_special = false;
    for v in values {
        if !v.is_finite() {
            special += v;
            has_special = true;
            continue;
        }
        let mut x = v;
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }
    if has_special {
        return special;
    }
    round_partials(&partials)
}

fn round_partials(partials: &[f64]) -> f64 {
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // Half-even correction when the discarded tail has the same sign as `lo`.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Dot product accumulated with error-free products and [`exact_sum`].
pub fn exact_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    exact_sum(a.iter().zip(b).flat_map(|(&x, &y)| {
        let p = x * y;
        let e = x.mul_add(y, -p);
        [p, e]
    }))
}

/// Dot product in twice the working precision (Ogita, Rump and Oishi's
/// `Dot2`): the result is as accurate as if accumulated in quadruple
/// precision and then rounded, at a fraction of the cost of [`exact_dot`].
pub fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut p, mut s) = (0.0_f64, 0.0_f64);
    for (&x, &y) in a.iter().zip(b) {
        let h = x * y;
        let r = x.mul_add(y, -h);
        let t = p + h;
        let z = t - p;
        let q = (p - (t - z)) + (h - z);
        p = t;
        s += q + r;
    }
    p + s
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Row-compressed sparse matrix. Duplicate entries within a row are allowed and
/// act additively.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn builder(ncols: usize) -> SparseBuilder {
        SparseBuilder {
            ncols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut b = Self::builder(m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v != 0.0 {
                    b.push(j, v);
                }
            }
            b.finish_row();
        }
        b.build()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    /// `(row, col)` pairs of stored entries.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, _)| (i, j)))
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `y += Aᵀ w`.
    pub fn tr_mul_vec_add(&self, w: &[f64], y: &mut [f64]) {
        for (i, &wi) in w.iter().enumerate() {
            if wi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                y[j] += v * wi;
            }
        }
    }

    /// `H += Σ_i scale_i · a_i a_iᵀ` over rows `a_i` with nonzero scale.
    pub fn add_scaled_gram(&self, scale: &[f64], h: &mut DMatrix<f64>) {
        for (i, &s) in scale.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let r = self.row_ptr[i]..self.row_ptr[i + 1];
            let cols = &self.col_idx[r.clone()];
            let vals = &self.values[r];
            for (a, &ja) in cols.iter().enumerate() {
                let va = s * vals[a];
                for (b, &jb) in cols.iter().enumerate() {
                    h[(ja, jb)] += va * vals[b];
                }
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Row-by-row assembler for [`SparseMatrix`].
#[derive(Debug)]
pub struct SparseBuilder {
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseBuilder {
    pub fn push(&mut self, col: usize, value: f64) {
        debug_assert!(col < self.ncols);
        self.col_idx.push(col);
        self.values.push(value);
    }

    pub fn finish_row(&mut self) {
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn build(self) -> SparseMatrix {
        SparseMatrix {
            nrows: self.row_ptr.len() - 1,
            ncols: self.ncols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            values: self.values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_dot_survives_cancellation() {
        let a = [1e16, 1.0, -1e16, 3.0];
        let b = [1.0, 1.0, 1.0, 1e-16];
        assert_eq!(compensated_dot(&a, &b), 1.0 + 3e-16);
        assert_eq!(compensated_dot(&[], &[]), 0.0);
    }

    #[test]
    fn exact_sum_recovers_cancelled_terms() {
        let v = [1e100, 1.0, -1e100, 1e-3];
        assert_eq!(exact_sum(v), 1.001);
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
    }

    #[test]
    fn exact_dot_is_correctly_rounded_on_ill_conditioned_input() {
        let a = [1e16, 1.0, -1e16];
        let b = [1.0, 3.0, 1.0];
        assert_eq!(exact_dot(&a, &b), 3.0);
    }

    #[test]
    fn sparse_products_match_dense() {
        let d = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, -3.0, 4.0]);
        let s = SparseMatrix::from_dense(&d);
        assert_eq!(s.nnz(), 4);
        assert_eq!(s.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, 1.0]);
        let mut y = vec![0.0; 3];
        s.tr_mul_vec_add(&[1.0, 2.0], &mut y);
        assert_eq!(y, vec![1.0, -6.0, 10.0]);
        let mut h = DMatrix::zeros(3, 3);
        s.add_scaled_gram(&[1.0, 1.0], &mut h);
        assert!((h - d.transpose() * &d).abs().max() < 1e-15);
        assert_eq!(s.to_dense(), d);
    }
}
