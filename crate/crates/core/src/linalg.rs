//! Dense linear-algebra helpers shared by the GP, sensitivity and local modules.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Jitter ladder relative to the signal variance: 1e-8, 1e-7, ..., 1e-4.
const JITTER_LADDER: [f64; 5] = [1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// Cholesky factor of a symmetric positive-definite matrix, together with
/// any diagonal jitter that had to be added to obtain it.
#[derive(Clone, Debug)]
pub struct Cholesky {
    llt: faer::linalg::solvers::Llt<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factor `a`. On failure, retry with `rel * scale` added to the diagonal
    /// for each rung of the jitter ladder before giving up.
    pub fn new_jittered(a: MatRef<'_, f64>, scale: f64) -> Result<Self> {
        if let Ok(llt) = a.llt(Side::Lower) {
            return Ok(Cholesky { llt, jitter: 0.0 });
        }
        let n = a.nrows();
        for rel in JITTER_LADDER {
            let jitter = rel * scale;
            let mut b = a.to_owned();
            for i in 0..n {
                b[(i, i)] += jitter;
            }
            if let Ok(llt) = b.llt(Side::Lower) {
                log::debug!("cholesky needed jitter {jitter:e} (n = {n})");
                return Ok(Cholesky { llt, jitter });
            }
        }
        Err(Error::Numerical(format!(
            "cholesky failed for {n}x{n} matrix after jitter up to {:e}",
            JITTER_LADDER[JITTER_LADDER.len() - 1] * scale
        )))
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> MatRef<'_, f64> {
        self.llt.L()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let sol = self.llt.solve(&rhs);
        (0..b.len()).map(|i| sol[(i, 0)]).collect()
    }

    pub fn solve_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.llt.solve(b)
    }

    /// `L^{-1} b`.
    pub fn forward_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        let mut out = b.to_owned();
        solve_lower_triangular_in_place(self.llt.L(), out.as_mut(), Par::Seq);
        out
    }

    pub fn forward_vec(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        let out = self.forward_mat(rhs.as_ref());
        (0..b.len()).map(|i| out[(i, 0)]).collect()
    }

    pub fn inverse(&self) -> Mat<f64> {
        self.llt.inverse()
    }

    pub fn reconstruct(&self) -> Mat<f64> {
        self.llt.reconstruct()
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
/// Eigenvectors are the columns of the returned matrix.
pub fn sym_eigen_desc(a: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let p = a.nrows();
    let sym = Mat::from_fn(p, p, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let vals: Vec<f64> = order.iter().map(|&i| s[i]).collect();
    let vecs = Mat::from_fn(p, p, |i, j| u[(i, order[j])]);
    Ok((vals, vecs))
}

/// Row-major copy of a design matrix for tight distance loops.
pub(crate) fn to_rows(x: MatRef<'_, f64>) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut out = Vec::with_capacity(n * p);
    for i in 0..n {
        for k in 0..p {
            out.push(x[(i, k)]);
        }
    }
    out
}

pub(crate) fn row(x: MatRef<'_, f64>, i: usize) -> Vec<f64> {
    (0..x.ncols()).map(|k| x[(i, k)]).collect()
}

/// Select rows of `x` by index, in the given order.
pub fn select_rows(x: MatRef<'_, f64>, idx: &[usize]) -> Mat<f64> {
    Mat::from_fn(idx.len(), x.ncols(), |i, k| x[(idx[i], k)])
}

/// Build an `n x p` matrix from row vectors.
pub fn from_rows(rows: &[Vec<f64>]) -> Mat<f64> {
    let p = rows.first().map_or(0, Vec::len);
    Mat::from_fn(rows.len(), p, |i, k| rows[i][k])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
