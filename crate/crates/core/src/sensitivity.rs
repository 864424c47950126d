//! Global sensitivity analyses built on fitted GPs: averaged ARD
//! length-scales, one-dimensional posterior ranges, and the expected gradient
//! outer-product matrix `C = E[grad f grad f^T]`, each aggregated over
//! random subsamples ("bags") of the data.

use faer::{Mat, MatRef};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitConfig, GpModel};
use crate::kernel::grad_prior_cov;
use crate::linalg::{select_rows, to_rows};
use crate::optim::golden_section;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    /// Uniform on the unit cube, integrated by Monte Carlo.
    Lebesgue,
    /// Empirical measure of the training inputs.
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub n_mc: usize,
    pub seed: u64,
}

impl MeasureSpec {
    pub const DEFAULT_N_MC: usize = 1000;

    pub fn lebesgue(n_mc: usize, seed: u64) -> Self {
        MeasureSpec { kind: MeasureKind::Lebesgue, n_mc, seed }
    }

    pub fn sample() -> Self {
        MeasureSpec { kind: MeasureKind::Sample, n_mc: 0, seed: 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.kind == MeasureKind::Lebesgue && self.n_mc == 0 {
            return Err(Error::contract("lebesgue measure needs at least one Monte Carlo draw"));
        }
        Ok(())
    }

    fn for_bag(&self, bag: usize) -> Self {
        MeasureSpec { seed: seed::derive(self.seed, bag as u64), ..*self }
    }
}

/// Estimated expected gradient outer-product matrix.
#[derive(Clone, Debug)]
pub struct CMatrix {
    pub matrix: Mat<f64>,
    pub measure: MeasureSpec,
    pub n_bags: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubbagConfig {
    pub n_bags: usize,
    pub bag_size: usize,
    pub seed: u64,
}

impl Default for SubbagConfig {
    fn default() -> Self {
        SubbagConfig { n_bags: 5, bag_size: 1500, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    Ard,
    Range,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityScores {
    pub method: ScoreMethod,
    /// Averaged length-scales (ard) or posterior ranges (range).
    pub scores: Vec<f64>,
}

pub const SCORE_FLOOR: f64 = 1e-12;

const CHUNK: usize = 32;

/// Posterior expectation of `C` under `measure`:
/// the average of `Sigma_grad(x) + mu_grad(x) mu_grad(x)^T`.
pub fn estimate_c(model: &GpModel, measure: &MeasureSpec) -> Result<CMatrix> {
    measure.validate()?;
    let p = model.dim();
    let points = match measure.kind {
        MeasureKind::Sample => model.x().to_owned(),
        MeasureKind::Lebesgue => {
            let mut rng = seed::rng(measure.seed);
            let draws: Vec<f64> = (0..measure.n_mc * p).map(|_| rng.random::<f64>()).collect();
            Mat::from_fn(measure.n_mc, p, |i, k| draws[i * p + k])
        }
    };
    let matrix = expected_gradient_outer(model, points.as_ref())?;
    Ok(CMatrix { matrix, measure: *measure, n_bags: 1 })
}

/// Average of `Sigma_grad + mu_grad mu_grad^T` over the rows of `points`.
pub fn expected_gradient_outer(model: &GpModel, points: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let p = model.dim();
    if points.ncols() != p {
        return Err(Error::dim(format!("points have {} columns, model has {p}", points.ncols())));
    }
    let m = points.nrows();
    if m == 0 {
        return Err(Error::contract("expected gradient outer product over zero points"));
    }
    let prior = grad_prior_cov(model.spec());
    let Some(chol) = model.cholesky() else {
        return Ok(prior);
    };
    let n = model.n();
    let spec = model.spec();
    let train = to_rows(model.x());
    let pts = to_rows(points);
    let alpha = model.alpha();

    let mut acc = Mat::<f64>::zeros(p, p);
    for start in (0..m).step_by(CHUNK) {
        let c = CHUNK.min(m - start);
        // column t*p + k holds d k(x_t, x_j) / d x_k for every training row j
        let mut g = Mat::<f64>::zeros(n, c * p);
        for t in 0..c {
            let xt = &pts[(start + t) * p..(start + t + 1) * p];
            for j in 0..n {
                let xj = &train[j * p..(j + 1) * p];
                let kv = spec.cov(xt, xj);
                for k in 0..p {
                    g[(j, t * p + k)] = -(xt[k] - xj[k]) / spec.lengthscales[k] * kv;
                }
            }
        }
        let v = chol.forward_mat(g.as_ref());
        for t in 0..c {
            let mu: Vec<f64> = (0..p).map(|k| (0..n).map(|j| g[(j, t * p + k)] * alpha[j]).sum()).collect();
            let vt = v.as_ref().subcols(t * p, p);
            let vtv = vt.transpose() * vt;
            for a in 0..p {
                for b in 0..p {
                    acc[(a, b)] += mu[a] * mu[b] - 0.5 * (vtv[(a, b)] + vtv[(b, a)]);
                }
            }
        }
    }
    Ok(Mat::from_fn(p, p, |a, b| {
        prior[(a, b)] + 0.5 * (acc[(a, b)] + acc[(b, a)]) / m as f64
    }))
}

/// Indices of bag `bag`: `bag_size` distinct rows drawn uniformly, sorted.
pub fn bag_indices(n: usize, bags: &SubbagConfig, bag: usize) -> Result<Vec<usize>> {
    if bags.bag_size == 0 || bags.bag_size > n {
        return Err(Error::contract(format!("bag size {} must be in 1..={n}", bags.bag_size)));
    }
    let mut rng = seed::rng(seed::derive(bags.seed, bag as u64));
    let mut idx = rand::seq::index::sample(&mut rng, n, bags.bag_size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// GP fits on each bag; bag `b` uses fit seed `derive(fit.seed, b)`.
/// Failed bags are dropped with a warning.
#[derive(Clone, Debug)]
pub struct BagFits {
    pub models: Vec<(usize, GpModel)>,
    pub requested: usize,
}

pub fn fit_bags(x: MatRef<'_, f64>, y: &[f64], bag_sets: &[Vec<usize>], fit: &FitConfig) -> Result<BagFits> {
    if x.nrows() != y.len() {
        return Err(Error::dim(format!("{} design rows but {} responses", x.nrows(), y.len())));
    }
    let fitted: Vec<(usize, Result<GpModel>)> = bag_sets
        .par_iter()
        .enumerate()
        .map(|(b, idx)| {
            let xb = select_rows(x, idx);
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let cfg = fit.clone().with_seed(seed::derive(fit.seed, b as u64));
            (b, fit_gp(xb.as_ref(), &yb, &cfg))
        })
        .collect();
    let mut models = Vec::with_capacity(fitted.len());
    let mut last_err = None;
    for (b, res) in fitted {
        match res {
            Ok(m) => models.push((b, m)),
            Err(e) => {
                log::warn!("bag {b} dropped: {e}");
                last_err = Some(e);
            }
        }
    }
    if models.is_empty() {
        return Err(Error::Fit(format!(
            "all {} bags failed to fit; last error: {}",
            bag_sets.len(),
            last_err.map_or_else(|| "no bags requested".to_string(), |e| e.to_string())
        )));
    }
    Ok(BagFits { models, requested: bag_sets.len() })
}

pub fn draw_bags(n: usize, bags: &SubbagConfig) -> Result<Vec<Vec<usize>>> {
    if bags.n_bags == 0 {
        return Err(Error::contract("at least one bag is required"));
    }
    (0..bags.n_bags).map(|b| bag_indices(n, bags, b)).collect()
}

/// Element-wise mean of per-bag `C` estimates; bag `b` integrates with
/// measure seed `derive(measure.seed, b)`.
pub fn c_from_bags(fits: &BagFits, measure: &MeasureSpec) -> Result<CMatrix> {
    measure.validate()?;
    let per_bag: Vec<Mat<f64>> = fits
        .models
        .par_iter()
        .map(|(b, model)| estimate_c(model, &measure.for_bag(*b)).map(|c| c.matrix))
        .collect::<Result<_>>()?;
    let p = per_bag[0].nrows();
    let mut avg = Mat::<f64>::zeros(p, p);
    for c in &per_bag {
        avg += c;
    }
    avg *= faer::Scale(1.0 / per_bag.len() as f64);
    Ok(CMatrix { matrix: avg, measure: *measure, n_bags: per_bag.len() })
}

pub fn subbag_c(x: MatRef<'_, f64>, y: &[f64], measure: &MeasureSpec, bags: &SubbagConfig, fit: &FitConfig) -> Result<CMatrix> {
    let sets = draw_bags(x.nrows(), bags)?;
    subbag_c_with_bags(x, y, measure, &sets, fit)
}

/// `subbag_c` with caller-supplied bag index sets.
pub fn subbag_c_with_bags(x: MatRef<'_, f64>, y: &[f64], measure: &MeasureSpec, bag_sets: &[Vec<usize>], fit: &FitConfig) -> Result<CMatrix> {
    let fits = fit_bags(x, y, bag_sets, fit)?;
    c_from_bags(&fits, measure)
}

/// Arithmetic mean of per-bag length-scale vectors.
pub fn ard_from_bags(fits: &BagFits) -> SensitivityScores {
    let p = fits.models[0].1.dim();
    let mut scores = vec![0.0; p];
    for (_, m) in &fits.models {
        for (s, l) in scores.iter_mut().zip(&m.spec().lengthscales) {
            *s += l;
        }
    }
    let nb = fits.models.len() as f64;
    SensitivityScores {
        method: ScoreMethod::Ard,
        scores: scores.into_iter().map(|s| (s / nb).max(SCORE_FLOOR)).collect(),
    }
}

pub fn subbag_ard(x: MatRef<'_, f64>, y: &[f64], bags: &SubbagConfig, fit: &FitConfig) -> Result<SensitivityScores> {
    let sets = draw_bags(x.nrows(), bags)?;
    subbag_ard_with_bags(x, y, &sets, fit)
}

pub fn subbag_ard_with_bags(x: MatRef<'_, f64>, y: &[f64], bag_sets: &[Vec<usize>], fit: &FitConfig) -> Result<SensitivityScores> {
    Ok(ard_from_bags(&fit_bags(x, y, bag_sets, fit)?))
}

const RANGE_GRID: usize = 512;

/// Range of the posterior mean of a 1-D GP of `y` on `x_col` over `[0, 1]`.
pub fn range_sensitivity(x_col: &[f64], y: &[f64], fit: &FitConfig) -> Result<f64> {
    if x_col.len() != y.len() {
        return Err(Error::dim(format!("{} inputs but {} responses", x_col.len(), y.len())));
    }
    if x_col.is_empty() {
        return Err(Error::contract("range sensitivity of an empty column"));
    }
    let (lo, hi) = x_col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi - lo > 1e-12) {
        return Ok(SCORE_FLOOR);
    }
    let x = Mat::from_fn(x_col.len(), 1, |i, _| x_col[i]);
    let model = fit_gp(x.as_ref(), y, &FitConfig { family: crate::kernel::KernelFamily::SeparableGaussian, ..fit.clone() })?;
    let spec = model.spec();
    let alpha = model.alpha();
    let mean = |t: f64| -> f64 {
        model.beta0() + x_col.iter().zip(alpha).map(|(xj, a)| a * spec.cov(&[t], &[*xj])).sum::<f64>()
    };

    let argmax = (0..y.len()).max_by(|&a, &b| y[a].total_cmp(&y[b]).then(b.cmp(&a))).unwrap_or(0);
    let argmin = (0..y.len()).min_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b))).unwrap_or(0);
    let width = 4.0 * spec.lengthscales[0].sqrt();
    let (_, neg_top) = golden_section(|t| -mean(t), x_col[argmax], 0.0, 1.0, width, 60);
    let (_, bottom) = golden_section(mean, x_col[argmin], 0.0, 1.0, width, 60);
    let mut top = -neg_top;
    let mut bottom = bottom;
    for i in 0..RANGE_GRID {
        let v = mean(i as f64 / (RANGE_GRID - 1) as f64);
        top = top.max(v);
        bottom = bottom.min(v);
    }
    Ok((top - bottom).max(SCORE_FLOOR))
}

/// Per-bag posterior ranges of every column, averaged over bags.
pub fn subbag_range_with_bags(x: MatRef<'_, f64>, y: &[f64], bag_sets: &[Vec<usize>], fit: &FitConfig) -> Result<SensitivityScores> {
    let p = x.ncols();
    let jobs: Vec<(usize, usize)> = (0..bag_sets.len()).flat_map(|b| (0..p).map(move |k| (b, k))).collect();
    let ranges: Vec<(usize, Result<f64>)> = jobs
        .par_iter()
        .map(|&(b, k)| {
            let idx = &bag_sets[b];
            let col: Vec<f64> = idx.iter().map(|&i| x[(i, k)]).collect();
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let cfg = fit.clone().with_seed(seed::derive(fit.seed, (b * p + k) as u64));
            (b, range_sensitivity(&col, &yb, &cfg))
        })
        .collect();
    let mut per_bag: Vec<Option<Vec<f64>>> = vec![Some(vec![0.0; p]); bag_sets.len()];
    for (job, (b, r)) in jobs.iter().zip(ranges) {
        match r {
            Ok(v) => {
                if let Some(s) = per_bag[b].as_mut() {
                    s[job.1] = v;
                }
            }
            Err(e) => {
                log::warn!("bag {b} dropped from range sensitivity: {e}");
                per_bag[b] = None;
            }
        }
    }
    let ok: Vec<Vec<f64>> = per_bag.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::Fit("range sensitivity failed on every bag".into()));
    }
    let scores = (0..p)
        .map(|k| (ok.iter().map(|s| s[k]).sum::<f64>() / ok.len() as f64).max(SCORE_FLOOR))
        .collect();
    Ok(SensitivityScores { method: ScoreMethod::Range, scores })
}

pub fn subbag_range(x: MatRef<'_, f64>, y: &[f64], bags: &SubbagConfig, fit: &FitConfig) -> Result<SensitivityScores> {
    let sets = draw_bags(x.nrows(), bags)?;
    subbag_range_with_bags(x, y, &sets, fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{eval_function, lhs_sample, TestFunction};
    use crate::kernel::KernelSpec;
    use crate::linalg::sym_eigen_desc;
    use approx::assert_relative_eq;

    fn max_abs(a: MatRef<'_, f64>) -> f64 {
        let mut m = 0.0f64;
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                m = m.max(a[(i, j)].abs());
            }
        }
        m
    }

    #[test]
    fn sample_measure_equals_per_point_average() {
        let x = lhs_sample(70, 3, 2);
        let y: Vec<f64> = (0..70).map(|i| (4.0 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 2)]).collect();
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        let c = estimate_c(&model, &MeasureSpec::sample()).unwrap();
        let mut oracle = Mat::<f64>::zeros(3, 3);
        for i in 0..70 {
            let g = model.gradient_posterior(&crate::linalg::row(x.as_ref(), i)).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    oracle[(a, b)] += (g.cov[(a, b)] + g.mean[a] * g.mean[b]) / 70.0;
                }
            }
        }
        let scale = max_abs(oracle.as_ref());
        for a in 0..3 {
            for b in 0..3 {
                assert!((c.matrix[(a, b)] - oracle[(a, b)]).abs() <= 1e-12 * scale);
                assert_eq!(c.matrix[(a, b)], c.matrix[(b, a)]);
            }
        }
    }

    #[test]
    fn zero_alpha_gives_average_posterior_covariance() {
        // single training point at the cube centre, response equal to beta0
        let spec = KernelSpec::separable(vec![0.2, 0.5], 1.3, 0.01).unwrap();
        let x = Mat::from_fn(1, 2, |_, _| 0.5);
        let model = GpModel::condition(x, vec![0.7], spec, 0.7).unwrap();
        assert_eq!(model.alpha(), &[0.0]);
        let measure = MeasureSpec::lebesgue(200, 5);
        let c = estimate_c(&model, &measure).unwrap();
        // hand loop: prior minus rank-one correction from the single point
        let mut rng = seed::rng(5);
        let mut oracle = [[0.0; 2]; 2];
        for _ in 0..200 {
            let xs = [rng.random::<f64>(), rng.random::<f64>()];
            let kv = 1.3 * (-((xs[0] - 0.5).powi(2) / 0.4 + (xs[1] - 0.5).powi(2) / 1.0)).exp();
            let g = [-(xs[0] - 0.5) / 0.2 * kv, -(xs[1] - 0.5) / 0.5 * kv];
            for a in 0..2 {
                for b in 0..2 {
                    let prior = if a == b { 1.3 / [0.2, 0.5][a] } else { 0.0 };
                    oracle[a][b] += (prior - g[a] * g[b] / 1.31) / 200.0;
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                assert_relative_eq!(c.matrix[(a, b)], oracle[a][b], max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn linear_function_recovers_outer_product() {
        // f(x) = 3 x1: C ~ diag(9, 0)
        let x = lhs_sample(200, 2, 31);
        let y: Vec<f64> = (0..200).map(|i| 3.0 * x[(i, 0)]).collect();
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        let c = estimate_c(&model, &MeasureSpec::sample()).unwrap().matrix;
        assert!((c[(0, 0)] - 9.0).abs() < 0.5, "C = {c:?}");
        assert!(c[(1, 1)].abs() < 0.1, "C = {c:?}");
        let frob = ((c[(0, 0)] - 9.0).powi(2) + 2.0 * c[(0, 1)].powi(2) + c[(1, 1)].powi(2)).sqrt();
        assert!(frob / 9.0 < 0.15);
    }

    #[test]
    fn linear_function_relative_frobenius_error() {
        let a = [1.0, -2.0, 0.5];
        let x = lhs_sample(250, 3, 32);
        let y: Vec<f64> = (0..250).map(|i| (0..3).map(|k| a[k] * x[(i, k)]).sum()).collect();
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        let c = estimate_c(&model, &MeasureSpec::sample()).unwrap().matrix;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                num += (c[(i, j)] - a[i] * a[j]).powi(2);
                den += (a[i] * a[j]).powi(2);
            }
        }
        assert!((num / den).sqrt() < 0.15, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn c_is_symmetric_psd() {
        for s in 0..5 {
            let x = lhs_sample(60, 4, 40 + s);
            let y: Vec<f64> = (0..60).map(|i| (5.0 * x[(i, 0)] * x[(i, 1)]).cos() + x[(i, 3)]).collect();
            let model = fit_gp(x.as_ref(), &y, &FitConfig::default().with_seed(s)).unwrap();
            for measure in [MeasureSpec::sample(), MeasureSpec::lebesgue(300, s)] {
                let c = estimate_c(&model, &measure).unwrap().matrix;
                for a in 0..4 {
                    for b in 0..4 {
                        assert!((c[(a, b)] - c[(b, a)]).abs() <= 1e-10 * max_abs(c.as_ref()));
                    }
                }
                let (vals, _) = sym_eigen_desc(c.as_ref()).unwrap();
                assert!(vals[3] >= -1e-8 * vals[0]);
            }
        }
    }

    #[test]
    fn monte_carlo_estimate_is_stable() {
        let x = lhs_sample(50, 2, 50);
        let y: Vec<f64> = (0..50).map(|i| (3.0 * x[(i, 0)]).sin() + x[(i, 1)].powi(2)).collect();
        let model = fit_gp(x.as_ref(), &y, &FitConfig::default()).unwrap();
        let small = MeasureSpec::lebesgue(10_000, 1);
        let c_small = estimate_c(&model, &small).unwrap().matrix;
        let c_big = estimate_c(&model, &MeasureSpec::lebesgue(100_000, 2)).unwrap().matrix;
        // per-entry standard error of the 10^4 estimate from the same draws
        let mut rng = seed::rng(1);
        let mut sum = [[0.0f64; 2]; 2];
        let mut sum_sq = [[0.0f64; 2]; 2];
        for _ in 0..10_000 {
            let xs = [rng.random::<f64>(), rng.random::<f64>()];
            let g = model.gradient_posterior(&xs).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    let v = g.cov[(a, b)] + g.mean[a] * g.mean[b];
                    sum[a][b] += v;
                    sum_sq[a][b] += v * v;
                }
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                let mean = sum[a][b] / 1e4;
                let var = sum_sq[a][b] / 1e4 - mean * mean;
                let se = (var / 1e4).sqrt();
                assert_relative_eq!(mean, c_small[(a, b)], max_relative = 1e-9);
                assert!((c_small[(a, b)] - c_big[(a, b)]).abs() <= 3.0 * se, "entry ({a},{b})");
            }
        }
    }

    #[test]
    fn lebesgue_needs_draws() {
        let x = lhs_sample(10, 2, 1);
        let model = fit_gp(x.as_ref(), &[1.0, 2.0, 0.0, 1.0, 3.0, 2.0, 1.0, 0.5, 0.2, 0.1], &FitConfig::default()).unwrap();
        assert!(estimate_c(&model, &MeasureSpec::lebesgue(0, 1)).is_err());
    }

    #[test]
    fn bags_are_distinct_sorted_and_seeded() {
        let cfg = SubbagConfig { n_bags: 3, bag_size: 40, seed: 9 };
        let b0 = bag_indices(100, &cfg, 0).unwrap();
        assert_eq!(b0.len(), 40);
        assert!(b0.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(b0, bag_indices(100, &cfg, 0).unwrap());
        assert_ne!(b0, bag_indices(100, &cfg, 1).unwrap());
        assert!(bag_indices(30, &cfg, 0).is_err());
    }

    #[test]
    fn single_full_bag_equals_direct_estimate() {
        let x = lhs_sample(60, 2, 61);
        let y: Vec<f64> = (0..60).map(|i| (x[(i, 0)] + 2.0 * x[(i, 1)]).sin()).collect();
        let fit = FitConfig { seed: 4, ..FitConfig::default() };
        let measure = MeasureSpec::lebesgue(500, 8);
        let bags = SubbagConfig { n_bags: 1, bag_size: 60, seed: 3 };
        let c = subbag_c(x.as_ref(), &y, &measure, &bags, &fit).unwrap();
        let model = fit_gp(x.as_ref(), &y, &fit.clone().with_seed(seed::derive(4, 0))).unwrap();
        let direct = estimate_c(&model, &MeasureSpec { seed: seed::derive(8, 0), ..measure }).unwrap();
        assert_eq!(c.matrix, direct.matrix);
    }

    #[test]
    fn forced_disjoint_bags_average() {
        let x = lhs_sample(80, 2, 62);
        let y: Vec<f64> = (0..80).map(|i| x[(i, 0)].powi(2) - x[(i, 1)]).collect();
        let fit = FitConfig::default();
        let sets = vec![(0..40).collect::<Vec<_>>(), (40..80).collect::<Vec<_>>()];
        let c = subbag_c_with_bags(x.as_ref(), &y, &MeasureSpec::sample(), &sets, &fit).unwrap();
        let ard = subbag_ard_with_bags(x.as_ref(), &y, &sets, &fit).unwrap();
        let mut c_hand = Mat::<f64>::zeros(2, 2);
        let mut l_hand = [0.0; 2];
        for (b, idx) in sets.iter().enumerate() {
            let xb = select_rows(x.as_ref(), idx);
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let m = fit_gp(xb.as_ref(), &yb, &fit.clone().with_seed(seed::derive(fit.seed, b as u64))).unwrap();
            let cb = estimate_c(&m, &MeasureSpec::sample()).unwrap().matrix;
            c_hand += &cb * faer::Scale(0.5);
            for k in 0..2 {
                l_hand[k] += 0.5 * m.spec().lengthscales[k];
            }
        }
        for a in 0..2 {
            for b in 0..2 {
                assert_relative_eq!(c.matrix[(a, b)], c_hand[(a, b)], max_relative = 1e-12);
            }
            assert_relative_eq!(ard.scores[a], l_hand[a], max_relative = 1e-12);
        }
        assert_eq!(c.n_bags, 2);
    }

    #[test]
    fn bag_order_does_not_matter() {
        let x = lhs_sample(60, 2, 63);
        let y: Vec<f64> = (0..60).map(|i| (2.0 * x[(i, 0)]).cos() * x[(i, 1)]).collect();
        let fit = FitConfig::default();
        let a = vec![(0..30).collect::<Vec<_>>(), (30..60).collect::<Vec<_>>()];
        let fits = fit_bags(x.as_ref(), &y, &a, &fit).unwrap();
        let mut reversed = fits.clone();
        reversed.models.reverse();
        let c1 = c_from_bags(&fits, &MeasureSpec::sample()).unwrap().matrix;
        let c2 = c_from_bags(&reversed, &MeasureSpec::sample()).unwrap().matrix;
        for i in 0..2 {
            for j in 0..2 {
                assert!((c1[(i, j)] - c2[(i, j)]).abs() <= 1e-15 * c1[(i, j)].abs().max(1.0));
            }
        }
        assert_eq!(ard_from_bags(&fits), ard_from_bags(&reversed));
    }

    #[test]
    fn identical_bags_give_their_lengthscales() {
        let x = lhs_sample(40, 2, 64);
        let y: Vec<f64> = (0..40).map(|i| x[(i, 0)].sin()).collect();
        let fit = FitConfig::default();
        let sets = vec![(0..40).collect::<Vec<_>>(); 3];
        let fits = fit_bags(x.as_ref(), &y, &sets, &FitConfig { n_starts: 1, ..fit }).unwrap();
        let l = fits.models[0].1.spec().lengthscales.clone();
        for (s, l) in ard_from_bags(&fits).scores.iter().zip(&l) {
            assert_relative_eq!(*s, *l, max_relative = 1e-14);
        }
    }

    #[test]
    fn ard_ranks_active_dimension_first() {
        let mut hits = 0;
        for s in 0..10 {
            let x = lhs_sample(200, 2, 70 + s);
            let y: Vec<f64> = (0..200).map(|i| (5.0 * x[(i, 0)]).sin()).collect();
            let bags = SubbagConfig { n_bags: 2, bag_size: 100, seed: s };
            let sc = subbag_ard(x.as_ref(), &y, &bags, &FitConfig::default().with_seed(s)).unwrap();
            if sc.scores[0] < sc.scores[1] {
                hits += 1;
            }
        }
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn all_bags_failing_is_an_error() {
        let x = lhs_sample(20, 2, 1);
        let mut y = vec![0.0; 20];
        y[3] = f64::NAN;
        let sets = vec![(0..20).collect::<Vec<_>>()];
        assert!(matches!(fit_bags(x.as_ref(), &y, &sets, &FitConfig::default()), Err(Error::Fit(_))));
    }

    #[test]
    fn range_examples() {
        let n = 100;
        let col: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let flat = vec![2.0; n];
        assert!(range_sensitivity(&col, &flat, &FitConfig::default()).unwrap() <= 1e-6);
        let r = range_sensitivity(&col, &col, &FitConfig::default()).unwrap();
        assert!((r - 1.0).abs() < 0.05, "range {r}");
        assert_eq!(range_sensitivity(&[0.4; 10], &col[..10], &FitConfig::default()).unwrap(), SCORE_FLOOR);
    }

    #[test]
    fn relevant_column_has_larger_range() {
        let mut hits = 0;
        for s in 0..10 {
            let x = lhs_sample(150, 2, 90 + s);
            let mut rng = seed::rng(s);
            let y: Vec<f64> = (0..150).map(|i| (4.0 * x[(i, 0)]).sin() + 0.05 * rng.random::<f64>()).collect();
            let c0: Vec<f64> = (0..150).map(|i| x[(i, 0)]).collect();
            let c1: Vec<f64> = (0..150).map(|i| x[(i, 1)]).collect();
            let fit = FitConfig::default().with_seed(s);
            if range_sensitivity(&c0, &y, &fit).unwrap() > range_sensitivity(&c1, &y, &fit).unwrap() {
                hits += 1;
            }
        }
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn ridge_active_direction_recovered() {
        let f = TestFunction::Ridge2d;
        let x = lhs_sample(400, 2, 123);
        let y = eval_function(&f, x.as_ref()).unwrap();
        let bags = SubbagConfig { n_bags: 1, bag_size: 400, seed: 1 };
        let c = subbag_c(x.as_ref(), &y, &MeasureSpec::lebesgue(1000, 2), &bags, &FitConfig::default()).unwrap();
        let (vals, vecs) = sym_eigen_desc(c.matrix.as_ref()).unwrap();
        let cos = (vecs[(0, 0)] + vecs[(1, 0)]).abs() / 2f64.sqrt();
        assert!(cos >= 0.99, "cos = {cos}, eigenvalues {vals:?}");
    }
}
