//! Gaussian-process regression with a constant prior mean.
//!
//! Fitting maximizes the marginal likelihood with the prior mean and signal
//! variance profiled out, searching over log length-scales and the log of the
//! nugget-to-signal ratio. Responses are standardized during the search; the
//! returned model is expressed in the original response units.

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, grad_cross_kernel, grad_prior_cov, kernel_matrix, KernelFamily, KernelSpec};
use crate::linalg::{to_rows, Cholesky};
use crate::optim::{lbfgs_bounded, nelder_mead_bounded, Bounds, Tolerances};
use crate::seed;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Conditioned GP: training data, hyperparameters and the factorization of
/// the nugget-augmented kernel matrix.
#[derive(Clone, Debug)]
pub struct GpModel {
    x: Mat<f64>,
    y: Vec<f64>,
    spec: KernelSpec,
    beta0: f64,
    chol: Option<Cholesky>,
    alpha: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDist {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct GradientPosterior {
    pub mean: Vec<f64>,
    pub cov: Mat<f64>,
}

impl GpModel {
    /// Condition a GP with fixed hyperparameters on `(x, y)`. An empty design
    /// gives the prior.
    pub fn condition(x: Mat<f64>, y: Vec<f64>, spec: KernelSpec, beta0: f64) -> Result<Self> {
        spec.validate()?;
        if x.nrows() != y.len() {
            return Err(Error::dim(format!("{} design rows but {} responses", x.nrows(), y.len())));
        }
        if x.ncols() != spec.dim() {
            return Err(Error::dim(format!("design has {} columns, kernel expects {}", x.ncols(), spec.dim())));
        }
        if x.nrows() == 0 {
            return Ok(GpModel { x, y, spec, beta0, chol: None, alpha: Vec::new() });
        }
        let k = kernel_matrix(x.as_ref(), &spec, true)?;
        let chol = Cholesky::new_jittered(k.as_ref(), spec.signal_variance)?;
        let resid: Vec<f64> = y.iter().map(|v| v - beta0).collect();
        let alpha = chol.solve_vec(&resid);
        Ok(GpModel { x, y, spec, beta0, chol: Some(chol), alpha })
    }

    pub fn x(&self) -> MatRef<'_, f64> {
        self.x.as_ref()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    /// `K^{-1} (y - beta0)`.
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn cholesky(&self) -> Option<&Cholesky> {
        self.chol.as_ref()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// Posterior mean and variance at each row of `x_star`. Variance is
    /// clamped at zero; `include_nugget` adds the observation noise.
    pub fn predict(&self, x_star: MatRef<'_, f64>, include_nugget: bool) -> Result<PredictiveDist> {
        if x_star.ncols() != self.dim() {
            return Err(Error::dim(format!("prediction points have {} columns, model has {}", x_star.ncols(), self.dim())));
        }
        let m = x_star.nrows();
        let noise = if include_nugget { self.spec.nugget } else { 0.0 };
        let Some(chol) = &self.chol else {
            return Ok(PredictiveDist {
                mean: vec![self.beta0; m],
                variance: vec![self.spec.signal_variance + noise; m],
            });
        };
        let kx = cross_kernel(self.x.as_ref(), x_star, &self.spec)?; // n x m
        let v = chol.forward_mat(kx.as_ref());
        let n = self.n();
        let mut mean = Vec::with_capacity(m);
        let mut variance = Vec::with_capacity(m);
        for j in 0..m {
            let mut mu = self.beta0;
            let mut reduction = 0.0;
            for i in 0..n {
                mu += kx[(i, j)] * self.alpha[i];
                reduction += v[(i, j)] * v[(i, j)];
            }
            mean.push(mu);
            variance.push((self.spec.signal_variance - reduction).max(0.0) + noise);
        }
        Ok(PredictiveDist { mean, variance })
    }

    /// Gaussian posterior of the gradient of the latent surface at `x_star`.
    pub fn gradient_posterior(&self, x_star: &[f64]) -> Result<GradientPosterior> {
        if x_star.len() != self.dim() {
            return Err(Error::dim(format!("point has {} coordinates, model has {}", x_star.len(), self.dim())));
        }
        let p = self.dim();
        let mut cov = grad_prior_cov(&self.spec);
        let Some(chol) = &self.chol else {
            return Ok(GradientPosterior { mean: vec![0.0; p], cov });
        };
        let g = grad_cross_kernel(x_star, self.x.as_ref(), &self.spec)?; // p x n
        let mean: Vec<f64> = (0..p)
            .map(|k| (0..self.n()).map(|j| g[(k, j)] * self.alpha[j]).sum())
            .collect();
        let v = chol.forward_mat(g.transpose()); // n x p
        let vtv = v.transpose() * &v;
        for a in 0..p {
            for b in 0..p {
                cov[(a, b)] -= 0.5 * (vtv[(a, b)] + vtv[(b, a)]);
            }
        }
        Ok(GradientPosterior { mean, cov })
    }

    /// Log marginal likelihood of the training data under this model.
    pub fn log_likelihood(&self) -> f64 {
        match &self.chol {
            None => 0.0,
            Some(chol) => {
                let resid: Vec<f64> = self.y.iter().map(|v| v - self.beta0).collect();
                let quad: f64 = resid.iter().zip(&self.alpha).map(|(r, a)| r * a).sum();
                -0.5 * quad - 0.5 * chol.log_det() - 0.5 * self.n() as f64 * LN_2PI
            }
        }
    }
}

/// `log N(y; beta0 1, K + nugget I)`.
pub fn log_marginal_likelihood(spec: &KernelSpec, beta0: f64, x: MatRef<'_, f64>, y: &[f64]) -> Result<f64> {
    let model = GpModel::condition(x.to_owned(), y.to_vec(), spec.clone(), beta0)?;
    Ok(model.log_likelihood())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub family: KernelFamily,
    pub n_starts: usize,
    /// Bounds on each length-scale (squared-distance denominator).
    pub lengthscale_bounds: (f64, f64),
    /// Bounds on the nugget as a fraction of the signal variance.
    pub nugget_bounds: (f64, f64),
    /// First start; later starts are spread around it.
    pub initial_lengthscale: f64,
    pub initial_nugget: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            family: KernelFamily::SeparableGaussian,
            n_starts: 5,
            lengthscale_bounds: (1e-3, 1e3),
            nugget_bounds: (1e-8, 1.0),
            initial_lengthscale: 0.1,
            initial_nugget: 1e-3,
            max_iter: 100,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn isotropic(mut self) -> Self {
        self.family = KernelFamily::IsotropicGaussian;
        self
    }

    fn n_lengthscales(&self, p: usize) -> usize {
        match self.family {
            KernelFamily::SeparableGaussian => p,
            KernelFamily::IsotropicGaussian => 1,
        }
    }

    fn bounds(&self, p: usize) -> Bounds {
        let nl = self.n_lengthscales(p);
        let mut lo = vec![self.lengthscale_bounds.0.ln(); nl];
        let mut hi = vec![self.lengthscale_bounds.1.ln(); nl];
        lo.push(self.nugget_bounds.0.ln());
        hi.push(self.nugget_bounds.1.ln());
        Bounds::new(lo, hi)
    }

    /// Start 0 is the configured initial point. Start 1 is the best
    /// isotropic length-scale on a coarse log grid (`center`); the rest are
    /// a Latin hypercube over a box around it.
    fn starts(&self, p: usize, center: Option<f64>) -> Vec<Vec<f64>> {
        let nl = self.n_lengthscales(p);
        let bounds = self.bounds(p);
        let mut first = vec![self.initial_lengthscale.ln(); nl];
        first.push(self.initial_nugget.ln());
        let mut starts = vec![first.clone()];
        let mut around = first;
        if let Some(c) = center {
            if self.n_starts > 1 {
                around[..nl].iter_mut().for_each(|v| *v = c);
                starts.push(around.clone());
            }
        }
        let extra = self.n_starts.saturating_sub(starts.len());
        if extra > 0 {
            let mut rng = seed::rng(self.seed);
            let half_width: Vec<f64> = (0..=nl).map(|k| if k < nl { 2.5 } else { 3.0 }).collect();
            let mut columns: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
            for w in &half_width {
                let mut perm: Vec<usize> = (0..extra).collect();
                perm.shuffle(&mut rng);
                columns.push(
                    perm.iter()
                        .map(|&s| -w + 2.0 * w * (s as f64 + rng.random::<f64>()) / extra as f64)
                        .collect(),
                );
            }
            for s in 0..extra {
                let mut v: Vec<f64> = (0..=nl).map(|k| around[k] + columns[k][s]).collect();
                bounds.clamp(&mut v);
                starts.push(v);
            }
        }
        starts
    }

    /// Best log length-scale, shared across inputs, on a 12-point grid.
    fn screen(&self, profile: &Profile<'_>, p: usize) -> Option<f64> {
        if self.n_starts < 2 {
            return None;
        }
        let nl = self.n_lengthscales(p);
        let (lo, hi) = (self.lengthscale_bounds.0.ln(), self.lengthscale_bounds.1.ln().min(10f64.ln()));
        let mut best: Option<(f64, f64)> = None;
        for i in 0..12 {
            let c = lo + (hi - lo) * i as f64 / 11.0;
            let mut theta = vec![c; nl];
            theta.push(self.initial_nugget.ln().max(self.nugget_bounds.0.ln()));
            if let Some(v) = profile.evaluate(&theta, false) {
                if best.is_none_or(|(bv, _)| v.nll < bv) {
                    best = Some((v.nll, c));
                }
            }
        }
        best.map(|(_, c)| c)
    }
}

/// Profiled negative log-likelihood in standardized units.
struct Profile<'a> {
    rows: &'a [f64],
    y: &'a [f64],
    n: usize,
    p: usize,
    family: KernelFamily,
}

struct ProfileValue {
    nll: f64,
    grad: Vec<f64>,
    beta0: f64,
    sigma2: f64,
}

impl Profile<'_> {
    fn lengthscales(&self, theta: &[f64]) -> Vec<f64> {
        match self.family {
            KernelFamily::SeparableGaussian => theta[..self.p].iter().map(|t| t.exp()).collect(),
            KernelFamily::IsotropicGaussian => vec![theta[0].exp(); self.p],
        }
    }

    fn evaluate(&self, theta: &[f64], with_grad: bool) -> Option<ProfileValue> {
        let (n, p) = (self.n, self.p);
        let ls = self.lengthscales(theta);
        let inv_ls: Vec<f64> = ls.iter().map(|l| 1.0 / l).collect();
        let g = theta[theta.len() - 1].exp();
        let rows = self.rows;

        let mut a = Mat::<f64>::zeros(n, n);
        for j in 0..n {
            a[(j, j)] = 1.0 + g;
            let xj = &rows[j * p..(j + 1) * p];
            for i in (j + 1)..n {
                let xi = &rows[i * p..(i + 1) * p];
                let mut s = 0.0;
                for k in 0..p {
                    let d = xi[k] - xj[k];
                    s += d * d * inv_ls[k];
                }
                let v = (-0.5 * s).exp();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let llt = a.as_ref().llt(faer::Side::Lower).ok()?;
        use faer::linalg::solvers::{DenseSolveCore, Solve};
        let rhs = Mat::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { self.y[i] });
        let sol = llt.solve(&rhs);
        let ones_w: f64 = (0..n).map(|i| sol[(i, 0)]).sum();
        let ones_y: f64 = (0..n).map(|i| sol[(i, 1)]).sum();
        if !(ones_w > 0.0) {
            return None;
        }
        let beta0 = ones_y / ones_w;
        let alpha: Vec<f64> = (0..n).map(|i| sol[(i, 1)] - beta0 * sol[(i, 0)]).collect();
        let quad: f64 = (0..n).map(|i| (self.y[i] - beta0) * alpha[i]).sum();
        let sigma2 = quad / n as f64;
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return None;
        }
        let l = llt.L();
        let log_det: f64 = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
        let nll = 0.5 * n as f64 * (sigma2.ln() + 1.0 + LN_2PI) + 0.5 * log_det;

        let mut grad = vec![0.0; theta.len()];
        if with_grad {
            let w = llt.inverse();
            let nl = theta.len() - 1;
            let mut per_dim = vec![0.0; p];
            for j in 0..n {
                let xj = &rows[j * p..(j + 1) * p];
                let aj = alpha[j] / sigma2;
                for i in (j + 1)..n {
                    let m = (alpha[i] * aj - w[(i, j)]) * a[(i, j)];
                    if m == 0.0 {
                        continue;
                    }
                    let xi = &rows[i * p..(i + 1) * p];
                    for k in 0..p {
                        let d = xi[k] - xj[k];
                        per_dim[k] += m * d * d;
                    }
                }
            }
            // d A_ij / d log l_k = A_ij d_k^2 / (2 l_k); pairs counted once
            for k in 0..p {
                let dk = per_dim[k] * 0.5 * inv_ls[k];
                if nl == 1 {
                    grad[0] -= dk;
                } else {
                    grad[k] -= dk;
                }
            }
            let alpha_sq: f64 = alpha.iter().map(|v| v * v).sum();
            let trace_w: f64 = (0..n).map(|i| w[(i, i)]).sum();
            grad[nl] = -0.5 * g * (alpha_sq / sigma2 - trace_w);
        }
        Some(ProfileValue { nll, grad, beta0, sigma2 })
    }
}

pub(crate) fn standardize(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fit a GP by maximum marginal likelihood with multi-start bounded search.
pub fn fit_gp(x: MatRef<'_, f64>, y: &[f64], config: &FitConfig) -> Result<GpModel> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(Error::dim(format!("{n} design rows but {} responses", y.len())));
    }
    if n == 0 || p == 0 {
        return Err(Error::contract("fit_gp needs at least one point and one input dimension"));
    }
    if y.iter().any(|v| !v.is_finite()) || (0..n).any(|i| (0..p).any(|k| !x[(i, k)].is_finite())) {
        return Err(Error::Data("non-finite value in GP training data".into()));
    }
    let nl = config.n_lengthscales(p);
    let (mean, sd) = standardize(y);

    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        // constant response: flat surface at the observed value
        let tiny = 1e-10 * mean.abs().max(1.0).powi(2);
        let ls = vec![config.initial_lengthscale; p];
        let spec = KernelSpec { family: config.family, lengthscales: ls, signal_variance: tiny, nugget: tiny };
        return GpModel::condition(x.to_owned(), y.to_vec(), spec, mean);
    }

    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
    let rows = to_rows(x);
    let profile = Profile { rows: &rows, y: &ys, n, p, family: config.family };
    let bounds = config.bounds(p);
    let tol = Tolerances { max_iter: config.max_iter, ftol: 1e-10, gtol: 1e-5 };

    let starts = config.starts(p, config.screen(&profile, p));
    let results: Vec<Option<(f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|x0| {
            let local = lbfgs_bounded(
                |theta| profile.evaluate(theta, true).map(|v| (v.nll, v.grad)),
                x0,
                &bounds,
                tol,
            );
            let local = local.or_else(|| {
                log::debug!("gradient search could not start; falling back to simplex");
                nelder_mead_bounded(|theta| profile.evaluate(theta, false).map(|v| v.nll), x0, &bounds, 0.5, 40 * (nl + 1) * (nl + 1))
            });
            local.map(|m| (m.value, m.x))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for (value, theta) in results.into_iter().flatten() {
        if best.as_ref().is_none_or(|(bv, _)| value < *bv) {
            best = Some((value, theta));
        }
    }
    let Some((_, theta)) = best else {
        return Err(Error::Fit(format!(
            "all {} starts failed to factorize the kernel matrix (n = {n}, p = {p})",
            starts.len()
        )));
    };
    let value = profile
        .evaluate(&theta, false)
        .ok_or_else(|| Error::Fit("optimum could not be re-evaluated".into()))?;

    let g = theta[nl].exp();
    let signal_variance = value.sigma2 * sd * sd;
    let spec = KernelSpec {
        family: config.family,
        lengthscales: profile.lengthscales(&theta),
        signal_variance,
        nugget: g * signal_variance,
    };
    GpModel::condition(x.to_owned(), y.to_vec(), spec, mean + sd * value.beta0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::lhs_sample;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn design(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_fn(rows.len(), rows[0].len(), |i, k| rows[i][k])
    }

    #[test]
    fn lml_single_point_standard_normal() {
        let spec = KernelSpec::separable(vec![1.0], 0.5, 0.5).unwrap();
        let x = design(&[&[0.3]]);
        let v = log_marginal_likelihood(&spec, 2.0, x.as_ref(), &[2.0]).unwrap();
        assert_relative_eq!(v, -0.918_938_533_204_672_8, epsilon = 1e-12);
    }

    #[test]
    fn lml_matches_explicit_two_by_two() {
        let spec = KernelSpec::separable(vec![0.2, 0.5], 1.7, 0.1).unwrap();
        let x = design(&[&[0.1, 0.4], &[0.6, 0.3]]);
        let y = [1.2, -0.4];
        let beta0 = 0.3;
        let k12 = 1.7 * (-(0.25 / 0.4 + 0.01 / 1.0f64)).exp();
        let (a, b, d) = (1.8, k12, 1.8);
        let det = a * d - b * b;
        let (r1, r2) = (y[0] - beta0, y[1] - beta0);
        let quad = (d * r1 * r1 - 2.0 * b * r1 * r2 + a * r2 * r2) / det;
        let expected = -0.5 * quad - 0.5 * det.ln() - LN_2PI;
        let v = log_marginal_likelihood(&spec, beta0, x.as_ref(), &y).unwrap();
        assert_relative_eq!(v, expected, epsilon = 1e-12);
    }

    #[test]
    fn lml_permutation_invariant() {
        let x = lhs_sample(12, 3, 4);
        let y: Vec<f64> = (0..12).map(|i| (x[(i, 0)] * 5.0).sin() + x[(i, 2)]).collect();
        let spec = KernelSpec::separable(vec![0.3, 0.2, 1.0], 1.1, 1e-3).unwrap();
        let perm: Vec<usize> = vec![5, 2, 11, 0, 3, 7, 1, 9, 4, 10, 8, 6];
        let xp = crate::linalg::select_rows(x.as_ref(), &perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = log_marginal_likelihood(&spec, 0.1, x.as_ref(), &y).unwrap();
        let b = log_marginal_likelihood(&spec, 0.1, xp.as_ref(), &yp).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-10);
    }

    #[test]
    fn profile_gradient_matches_finite_differences() {
        let x = lhs_sample(40, 3, 8);
        let rows = to_rows(x.as_ref());
        let y: Vec<f64> = (0..40).map(|i| (4.0 * x[(i, 0)]).sin() + 0.3 * x[(i, 1)]).collect();
        let (m, s) = standardize(&y);
        let ys: Vec<f64> = y.iter().map(|v| (v - m) / s).collect();
        for family in [KernelFamily::SeparableGaussian, KernelFamily::IsotropicGaussian] {
            let prof = Profile { rows: &rows, y: &ys, n: 40, p: 3, family };
            let theta: Vec<f64> = match family {
                KernelFamily::SeparableGaussian => vec![-1.5, -0.5, 0.7, -5.0],
                KernelFamily::IsotropicGaussian => vec![-1.0, -4.0],
            };
            let v = prof.evaluate(&theta, true).unwrap();
            for k in 0..theta.len() {
                let h = 1e-5;
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (prof.evaluate(&up, false).unwrap().nll - prof.evaluate(&dn, false).unwrap().nll) / (2.0 * h);
                assert!((fd - v.grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{family:?} k={k}: {fd} vs {}", v.grad[k]);
            }
        }
    }

    #[test]
    fn constant_response_predicts_constant() {
        let x = lhs_sample(20, 2, 1);
        let y = vec![3.25; 20];
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        let xs = lhs_sample(50, 2, 2);
        let pred = model.predict(xs.as_ref(), true).unwrap();
        for m in pred.mean {
            assert!((m - 3.25).abs() < 1e-6);
        }
    }

    /// Draw from a zero-mean GP prior at the rows of `x`.
    fn gp_draw(x: MatRef<'_, f64>, spec: &KernelSpec, seed: u64) -> Vec<f64> {
        let k = kernel_matrix(x, spec, true).unwrap();
        let chol = Cholesky::new_jittered(k.as_ref(), 1.0).unwrap();
        let mut rng = crate::seed::rng(seed);
        let z: Vec<f64> = (0..x.nrows()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let l = chol.l();
        (0..x.nrows()).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect()
    }

    #[test]
    fn recovers_lengthscale_ordering() {
        let truth = KernelSpec::separable(vec![0.2, 5.0], 1.0, 1e-6).unwrap();
        let mut hits = 0;
        for s in 0..10 {
            let x = lhs_sample(300, 2, 100 + s);
            let y = gp_draw(x.as_ref(), &truth, 200 + s);
            let model = fit_gp(x.as_ref(), &y, &FitConfig::default().with_seed(s)).unwrap();
            let l = &model.spec().lengthscales;
            if l[0] < l[1] {
                hits += 1;
            }
        }
        assert!(hits >= 9, "ordering recovered in {hits}/10 seeds");
    }

    #[test]
    fn scaling_response_scales_signal_variance() {
        let x = lhs_sample(60, 2, 9);
        let y: Vec<f64> = (0..60).map(|i| (3.0 * x[(i, 0)]).sin() + 0.5 * x[(i, 1)].powi(2)).collect();
        let y2: Vec<f64> = y.iter().map(|v| 2.0 * v).collect();
        let cfg = FitConfig::default().with_seed(3);
        let a = fit_gp(x.as_ref(), &y, &cfg).unwrap();
        let b = fit_gp(x.as_ref(), &y2, &cfg).unwrap();
        for (la, lb) in a.spec().lengthscales.iter().zip(&b.spec().lengthscales) {
            assert!((la.ln() - lb.ln()).abs() < 1e-3, "{la} vs {lb}");
        }
        assert_relative_eq!(b.spec().signal_variance / a.spec().signal_variance, 4.0, max_relative = 1e-3);
    }

    #[test]
    fn interpolates_without_nugget() {
        let x = lhs_sample(15, 2, 5);
        let y: Vec<f64> = (0..15).map(|i| x[(i, 0)] - 2.0 * x[(i, 1)]).collect();
        let spec = KernelSpec::separable(vec![0.05, 0.05], 1.0, 0.0).unwrap();
        let model = GpModel::condition(x.clone(), y.clone(), spec, 0.2).unwrap();
        let pred = model.predict(x.as_ref(), false).unwrap();
        for i in 0..15 {
            assert!((pred.mean[i] - y[i]).abs() < 1e-8);
            assert!(pred.variance[i] < 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let x = lhs_sample(10, 2, 6);
        let y: Vec<f64> = (0..10).map(|i| x[(i, 0)] * 10.0).collect();
        let spec = KernelSpec::separable(vec![0.01, 0.01], 2.5, 1e-4).unwrap();
        let model = GpModel::condition(x, y, spec, -1.0).unwrap();
        let far = design(&[&[50.0, -40.0]]);
        let pred = model.predict(far.as_ref(), false).unwrap();
        assert!((pred.mean[0] + 1.0).abs() < 1e-6);
        assert!((pred.variance[0] - 2.5).abs() < 1e-6);
    }

    #[test]
    fn predict_matches_two_by_two_conditioning() {
        let spec = KernelSpec::separable(vec![0.3], 1.4, 0.05).unwrap();
        let x = design(&[&[0.2], &[0.7]]);
        let y = [0.5, -1.0];
        let beta0 = 0.1;
        let model = GpModel::condition(x, y.to_vec(), spec.clone(), beta0).unwrap();
        let xs = 0.4;
        let k = |a: f64, b: f64| 1.4 * (-(a - b) * (a - b) / 0.6).exp();
        let (a, b, d) = (1.45, k(0.2, 0.7), 1.45);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let ks = [k(xs, 0.2), k(xs, 0.7)];
        let r = [y[0] - beta0, y[1] - beta0];
        let mean = beta0 + (0..2).map(|i| (0..2).map(|j| ks[i] * inv[i][j] * r[j]).sum::<f64>()).sum::<f64>();
        let var = 1.4 - (0..2).map(|i| (0..2).map(|j| ks[i] * inv[i][j] * ks[j]).sum::<f64>()).sum::<f64>();
        let pred = model.predict(design(&[&[xs]]).as_ref(), false).unwrap();
        assert_relative_eq!(pred.mean[0], mean, epsilon = 1e-12);
        assert_relative_eq!(pred.variance[0], var, epsilon = 1e-12);
        let noisy = model.predict(design(&[&[xs]]).as_ref(), true).unwrap();
        assert_relative_eq!(noisy.variance[0], var + 0.05, epsilon = 1e-12);
    }

    #[test]
    fn variance_bounded_by_prior() {
        let x = lhs_sample(30, 3, 12);
        let y: Vec<f64> = (0..30).map(|i| x[(i, 1)].sin()).collect();
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        let xs = lhs_sample(200, 3, 13);
        let pred = model.predict(xs.as_ref(), true).unwrap();
        let cap = model.spec().signal_variance + model.spec().nugget + 1e-10;
        assert!(pred.variance.iter().all(|&v| (0.0..=cap).contains(&v)));
    }

    #[test]
    fn gradient_posterior_of_prior() {
        let spec = KernelSpec::separable(vec![0.5, 2.0], 3.0, 0.1).unwrap();
        let model = GpModel::condition(Mat::zeros(0, 2), vec![], spec, 0.0).unwrap();
        let gp = model.gradient_posterior(&[0.3, 0.3]).unwrap();
        assert_eq!(gp.mean, vec![0.0, 0.0]);
        assert_eq!((gp.cov[(0, 0)], gp.cov[(1, 1)], gp.cov[(0, 1)]), (6.0, 1.5, 0.0));
    }

    fn fd_mean_gradient(model: &GpModel, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|k| {
                let mut up = x.to_vec();
                let mut dn = x.to_vec();
                up[k] += h;
                dn[k] -= h;
                let pts = crate::linalg::from_rows(&[up, dn]);
                let m = model.predict(pts.as_ref(), false).unwrap().mean;
                (m[0] - m[1]) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_mean_at_training_point_matches_fd() {
        let n = 40;
        let x = Mat::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let y: Vec<f64> = (0..n).map(|i| (6.0 * x[(i, 0)]).sin()).collect();
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        for i in [3usize, 17, 30] {
            let xi = [x[(i, 0)]];
            let g = model.gradient_posterior(&xi).unwrap();
            let fd = fd_mean_gradient(&model, &xi, 1e-5);
            assert!((g.mean[0] - fd[0]).abs() / fd[0].abs().max(1e-8) < 1e-4, "{} vs {}", g.mean[0], fd[0]);
        }
    }

    #[test]
    fn gradient_cov_is_psd() {
        let mut rng = crate::seed::rng(77);
        for t in 0..100 {
            let p = 1 + t % 4;
            let n = 5 + t % 20;
            let x = lhs_sample(n, p, t as u64);
            let ls: Vec<f64> = (0..p).map(|_| rng.random_range(0.01..1.0)).collect();
            let spec = KernelSpec::separable(ls, rng.random_range(0.1..5.0), rng.random_range(1e-8..1e-2)).unwrap();
            let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let model = GpModel::condition(x, y, spec, 0.0).unwrap();
            let xs: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            let g = model.gradient_posterior(&xs).unwrap();
            for a in 0..p {
                for b in 0..p {
                    assert_eq!(g.cov[(a, b)], g.cov[(b, a)]);
                }
            }
            let (vals, _) = crate::linalg::sym_eigen_desc(g.cov.as_ref()).unwrap();
            assert!(vals[p - 1] >= -1e-8 * vals[0].abs(), "eigenvalues {vals:?}");
        }
    }

    #[test]
    fn large_jitter_lowers_likelihood_of_interpolating_fit() {
        let x = lhs_sample(40, 2, 21);
        let y: Vec<f64> = (0..40).map(|i| (3.0 * x[(i, 0)]).sin() * x[(i, 1)]).collect();
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        let base = model.log_likelihood();
        let mut jittered = model.spec().clone();
        jittered.nugget += 0.5 * model.spec().signal_variance;
        let worse = log_marginal_likelihood(&jittered, model.beta0(), x.as_ref(), &y).unwrap();
        assert!(worse < base, "{worse} >= {base}");
    }

    #[test]
    fn fit_rejects_bad_input() {
        let x = lhs_sample(5, 2, 1);
        assert!(matches!(fit_gp(x.as_ref(), &[1.0; 4], &FitConfig::default()), Err(Error::Dimension(_))));
        let mut y = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        y[2] = f64::NAN;
        assert!(matches!(fit_gp(x.as_ref(), &y, &FitConfig::default()), Err(Error::Data(_))));
    }
}
