//! Dense least squares through Householder QR with column pivoting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Relative threshold on `|R_kk| / |R_00|` below which a column counts as
/// linearly dependent.
pub const RANK_TOL: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Wraps row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape { expected: rows * cols, found: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from a list of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape { expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry `(i, j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Sets entry `(i, j)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }
}

/// Inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pivoted QR factorization `A P = Q R` of a tall matrix.
#[derive(Debug, Clone)]
pub struct Qr {
    m: usize,
    n: usize,
    // column-major; R on and above the diagonal
    a: Vec<f64>,
    // Householder vectors, one per step, each of length m - k
    vs: Vec<Vec<f64>>,
    betas: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl Qr {
    /// Factorizes `x`; the numerical rank is determined with [`RANK_TOL`].
    pub fn new(x: &Matrix) -> Self {
        let (m, n) = (x.rows, x.cols);
        let mut a = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                a[j * m + i] = x.get(i, j);
            }
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut vs = Vec::new();
        let mut betas = Vec::new();
        let steps = m.min(n);
        for k in 0..steps {
            let norm2 = |a: &[f64], j: usize| a[j * m + k..(j + 1) * m].iter().map(|v| v * v).sum::<f64>();
            let (p, _) = (k..n).map(|j| (j, norm2(&a, j))).fold((k, -1.0), |best, c| if c.1 > best.1 { c } else { best });
            if p != k {
                for i in 0..m {
                    a.swap(k * m + i, p * m + i);
                }
                perm.swap(k, p);
            }
            let col = &a[k * m + k..(k + 1) * m];
            let norm = libm::sqrt(col.iter().map(|v| v * v).sum::<f64>());
            if norm == 0.0 {
                vs.push(vec![0.0; m - k]);
                betas.push(0.0);
                continue;
            }
            let alpha = if col[0] > 0.0 { -norm } else { norm };
            let mut v = col.to_vec();
            v[0] -= alpha;
            let vv: f64 = v.iter().map(|t| t * t).sum();
            let beta = 2.0 / vv;
            for j in k + 1..n {
                let c = &mut a[j * m + k..(j + 1) * m];
                let s = beta * dot(&v, c);
                for (ci, vi) in c.iter_mut().zip(&v) {
                    *ci -= s * vi;
                }
            }
            a[k * m + k] = alpha;
            for i in k + 1..m {
                a[k * m + i] = 0.0;
            }
            vs.push(v);
            betas.push(beta);
        }
        let r00 = if steps > 0 { libm::fabs(a[0]) } else { 0.0 };
        let rank = (0..steps).take_while(|&k| r00 > 0.0 && libm::fabs(a[k * m + k]) > RANK_TOL * r00).count();
        Self { m, n, a, vs, betas, perm, rank }
    }

    /// Numerical rank.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Whether the rank equals the number of columns.
    pub fn is_full_rank(&self) -> bool {
        self.rank == self.n && self.m >= self.n
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.m + i]
    }

    /// `Q' b`.
    fn qt(&self, b: &[f64]) -> Vec<f64> {
        let mut y = b.to_vec();
        for (k, (v, beta)) in self.vs.iter().zip(&self.betas).enumerate() {
            let s = beta * dot(v, &y[k..]);
            for (yi, vi) in y[k..].iter_mut().zip(v) {
                *yi -= s * vi;
            }
        }
        y
    }

    /// Least-squares solution of `x b = y`; requires full column rank.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.m {
            return Err(Error::Shape { expected: self.m, found: y.len() });
        }
        if !self.is_full_rank() {
            return Err(Error::Contract("least squares needs full column rank"));
        }
        let qty = self.qt(y);
        let mut z = vec![0.0; self.n];
        for i in (0..self.n).rev() {
            let s: f64 = (i + 1..self.n).map(|j| self.r(i, j) * z[j]).sum();
            z[i] = (qty[i] - s) / self.r(i, i);
        }
        let mut b = vec![0.0; self.n];
        for (i, &p) in self.perm.iter().enumerate() {
            b[p] = z[i];
        }
        Ok(b)
    }

    /// `(X'X)^{-1}` in the original column order; requires full column rank.
    pub fn inverse_gram(&self) -> Result<Matrix> {
        if !self.is_full_rank() {
            return Err(Error::Contract("inverse Gram matrix needs full column rank"));
        }
        let n = self.n;
        // inverse of the upper-triangular R, column by column
        let mut rinv = vec![0.0; n * n];
        for j in 0..n {
            rinv[j * n + j] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let s: f64 = (i + 1..=j).map(|k| self.r(i, k) * rinv[k * n + j]).sum();
                rinv[i * n + j] = -s / self.r(i, i);
            }
        }
        let mut out = Matrix::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let s: f64 = (a.max(b)..n).map(|k| rinv[a * n + k] * rinv[b * n + k]).sum();
                out.set(self.perm[a], self.perm[b], s);
            }
        }
        Ok(out)
    }
}

/// Coefficients and residuals of a least-squares fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    /// Coefficients in column order.
    pub coef: Vec<f64>,
    /// `y - X coef`.
    pub residuals: Vec<f64>,
}

/// Ordinary least squares of `y` on the columns of `x`.
///
/// `label` names the data in errors (a cluster id or `"pooled"`).
pub fn least_squares(x: &Matrix, y: &[f64], label: &str) -> Result<Fit> {
    if y.len() != x.rows() {
        return Err(Error::Shape { expected: x.rows(), found: y.len() });
    }
    if x.rows() < x.cols() {
        return Err(Error::InsufficientRows { cluster: String::from(label), rows: x.rows(), params: x.cols() });
    }
    let qr = Qr::new(x);
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient { cluster: String::from(label), rank: qr.rank(), cols: x.cols() });
    }
    let coef = qr.solve(y)?;
    let fitted = x.mul_vec(&coef);
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(Fit { coef, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_point_line() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let fit = least_squares(&x, &[0.0, 1.0, 1.0], "k").unwrap();
        assert!((fit.coef[0] - 1.0 / 6.0).abs() < 1e-14);
        assert!((fit.coef[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn inverse_gram_matches_normal_equations() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![1.0, 1.0, 0.5], vec![1.0, 2.0, -1.0], vec![1.0, 5.0, 3.0]]).unwrap();
        let inv = Qr::new(&x).inverse_gram().unwrap();
        let mut g = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                g.set(i, j, (0..4).map(|r| x.get(r, i) * x.get(r, j)).sum());
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| g.get(i, k) * inv.get(k, j)).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn collinear_columns_are_detected() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        match least_squares(&x, &[1.0, 2.0, 3.0], "c7") {
            Err(Error::RankDeficient { cluster, rank, cols }) => {
                assert_eq!((cluster.as_str(), rank, cols), ("c7", 1, 2));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_few_rows() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(least_squares(&x, &[1.0], "a"), Err(Error::InsufficientRows { .. })));
    }
}
