//! Brute-force Euclidean neighbor search and k-NN regression.

use faer::MatRef;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{sq_dist, to_rows};

/// Read-only row-major copy of a design, shared by neighbor queries.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    rows: Vec<f64>,
    n: usize,
    p: usize,
}

impl NeighborIndex {
    pub fn new(z: MatRef<'_, f64>) -> Self {
        NeighborIndex { rows: to_rows(z), n: z.nrows(), p: z.ncols() }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    /// Indices of the `k` nearest rows ordered by (distance, index),
    /// optionally skipping one row.
    pub fn nearest(&self, z: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut cand: Vec<(f64, usize)> = (0..self.n)
            .filter(|&i| Some(i) != exclude)
            .map(|i| (sq_dist(z, self.point(i)), i))
            .collect();
        let k = k.min(cand.len());
        if k == 0 {
            return Vec::new();
        }
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k - 1, cmp);
            cand.truncate(k);
        }
        cand.sort_unstable_by(cmp);
        cand.into_iter().map(|(_, i)| i).collect()
    }
}

fn check(z_train: MatRef<'_, f64>, y: &[f64], k: usize) -> Result<()> {
    if z_train.nrows() != y.len() {
        return Err(Error::dim(format!("{} training rows but {} responses", z_train.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::contract("k-NN needs a non-empty training set"));
    }
    if k == 0 || k > y.len() {
        return Err(Error::contract(format!("k = {k} must be in 1..={}", y.len())));
    }
    Ok(())
}

/// Unweighted mean response of the `k` nearest training points.
pub fn knn_predict(z_train: MatRef<'_, f64>, y: &[f64], z_star: &[f64], k: usize) -> Result<f64> {
    check(z_train, y, k)?;
    if z_star.len() != z_train.ncols() {
        return Err(Error::dim(format!("query has {} coordinates, design has {}", z_star.len(), z_train.ncols())));
    }
    let index = NeighborIndex::new(z_train);
    Ok(mean_of(&index.nearest(z_star, k, None), y))
}

/// `knn_predict` at every row of `z_test`.
pub fn knn_predict_batch(z_train: MatRef<'_, f64>, y: &[f64], z_test: MatRef<'_, f64>, k: usize) -> Result<Vec<f64>> {
    check(z_train, y, k)?;
    if z_test.ncols() != z_train.ncols() {
        return Err(Error::dim(format!("test design has {} columns, training has {}", z_test.ncols(), z_train.ncols())));
    }
    let index = NeighborIndex::new(z_train);
    let test = NeighborIndex::new(z_test);
    Ok((0..test.len())
        .into_par_iter()
        .map(|i| mean_of(&index.nearest(test.point(i), k, None), y))
        .collect())
}

/// Leave-one-out k-NN mean squared error on the first `r` columns.
pub fn loo_knn_mse(z: MatRef<'_, f64>, y: &[f64], r: usize, k: usize) -> Result<f64> {
    if r == 0 || r > z.ncols() {
        return Err(Error::contract(format!("rank {r} must be in 1..={}", z.ncols())));
    }
    if z.nrows() != y.len() {
        return Err(Error::dim(format!("{} rows but {} responses", z.nrows(), y.len())));
    }
    if k == 0 || y.len() <= k {
        return Err(Error::contract(format!("leave-one-out k-NN needs n > k (n = {}, k = {k})", y.len())));
    }
    let index = NeighborIndex::new(z.subcols(0, r));
    let sse: f64 = (0..y.len())
        .into_par_iter()
        .map(|i| (mean_of(&index.nearest(index.point(i), k, Some(i)), y) - y[i]).powi(2))
        .sum();
    Ok(sse / y.len() as f64)
}

fn mean_of(idx: &[usize], y: &[f64]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}
