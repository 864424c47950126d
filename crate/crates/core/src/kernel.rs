//! Gaussian (squared-exponential) covariance functions.
//!
//! Length-scales enter as denominators of squared distances:
//! `k(x, y) = s2 * exp(-sum_k (x_k - y_k)^2 / (2 l_k))`. The isotropic
//! family is the separable one with every `l_k` equal.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::to_rows;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    SeparableGaussian,
    IsotropicGaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// One entry per input dimension, broadcast for the isotropic family.
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn separable(lengthscales: Vec<f64>, signal_variance: f64, nugget: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::SeparableGaussian,
            lengthscales,
            signal_variance,
            nugget,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn isotropic(p: usize, lengthscale: f64, signal_variance: f64, nugget: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::IsotropicGaussian,
            lengthscales: vec![lengthscale; p],
            signal_variance,
            nugget,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::contract(format!(
                "lengthscales must be positive and finite, got {:?}",
                self.lengthscales
            )));
        }
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::contract(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::contract(format!("nugget must be non-negative, got {}", self.nugget)));
        }
        if self.family == KernelFamily::IsotropicGaussian
            && self.lengthscales.windows(2).any(|w| w[0] != w[1])
        {
            return Err(Error::contract("isotropic kernel requires equal lengthscales"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Kernel value for two points of the right length; no checks.
    #[inline]
    pub(crate) fn cov(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = x - y;
            s += d * d / l;
        }
        self.signal_variance * (-0.5 * s).exp()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dim(format!(
                "point has {} coordinates, kernel expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_design(&self, x: MatRef<'_, f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::dim(format!(
                "design has {} columns, kernel expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }
}

pub fn kernel_eval(xi: &[f64], xj: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.check_point(xi)?;
    spec.check_point(xj)?;
    Ok(spec.cov(xi, xj))
}

/// Symmetric `n x n` kernel matrix, optionally with the nugget on the diagonal.
pub fn kernel_matrix(x: MatRef<'_, f64>, spec: &KernelSpec, with_nugget: bool) -> Result<Mat<f64>> {
    spec.check_design(x)?;
    let n = x.nrows();
    let p = x.ncols();
    let rows = to_rows(x);
    let mut k = Mat::zeros(n, n);
    for j in 0..n {
        let xj = &rows[j * p..(j + 1) * p];
        k[(j, j)] = spec.signal_variance + if with_nugget { spec.nugget } else { 0.0 };
        for i in (j + 1)..n {
            let v = spec.cov(&rows[i * p..(i + 1) * p], xj);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `m x n` cross-covariance between the rows of `a` and the rows of `b`.
pub fn cross_kernel(a: MatRef<'_, f64>, b: MatRef<'_, f64>, spec: &KernelSpec) -> Result<Mat<f64>> {
    spec.check_design(a)?;
    spec.check_design(b)?;
    let p = spec.dim();
    let ra = to_rows(a);
    let rb = to_rows(b);
    Ok(Mat::from_fn(a.nrows(), b.nrows(), |i, j| {
        spec.cov(&ra[i * p..(i + 1) * p], &rb[j * p..(j + 1) * p])
    }))
}

/// Covariance between a point and every row of a design.
pub fn cross_kernel_vec(x_star: &[f64], x: MatRef<'_, f64>, spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.check_point(x_star)?;
    spec.check_design(x)?;
    let p = spec.dim();
    let rows = to_rows(x);
    Ok((0..x.nrows()).map(|j| spec.cov(x_star, &rows[j * p..(j + 1) * p])).collect())
}

/// `p x n` matrix of partial derivatives of `k(x_star, x_j)` with respect to
/// the coordinates of `x_star`.
pub fn grad_cross_kernel(x_star: &[f64], x: MatRef<'_, f64>, spec: &KernelSpec) -> Result<Mat<f64>> {
    spec.check_point(x_star)?;
    spec.check_design(x)?;
    let p = spec.dim();
    let n = x.nrows();
    let mut g = Mat::zeros(p, n);
    for j in 0..n {
        let xj = crate::linalg::row(x, j);
        let kv = spec.cov(x_star, &xj);
        for k in 0..p {
            g[(k, j)] = -(x_star[k] - xj[k]) / spec.lengthscales[k] * kv;
        }
    }
    Ok(g)
}

/// Prior covariance of the gradient of a stationary Gaussian-kernel process:
/// `diag(s2 / l_k)`, the same at every point.
pub fn grad_prior_cov(spec: &KernelSpec) -> Mat<f64> {
    let p = spec.dim();
    Mat::from_fn(p, p, |i, j| {
        if i == j {
            spec.signal_variance / spec.lengthscales[i]
        } else {
            0.0
        }
    })
}
