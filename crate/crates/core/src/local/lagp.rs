//! Local approximate GP: a per-site design grown greedily by predictive
//! variance reduction at the target, then an isotropic GP refit on it.

use faer::{Mat, MatRef};
use rayon::prelude::*;

use super::{LocalConfig, NeighborIndex};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitConfig, PredictiveDist};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{dot, sq_dist, to_rows};

#[derive(Clone, Debug)]
pub struct LocalGpTrace {
    pub mean: f64,
    pub variance: f64,
    /// Training indices of the final local design, in order of inclusion.
    pub design: Vec<usize>,
    /// Noise-free variance at the target under `spec0` after the seed design
    /// and after each greedy addition.
    pub variances: Vec<f64>,
}

/// Isotropic starting kernel for local models: length-scale at the 10%
/// quantile of pairwise squared distances over up to 200 evenly spaced rows.
pub fn default_local_spec(z: MatRef<'_, f64>, y: &[f64]) -> Result<KernelSpec> {
    let (n, p) = z.shape();
    if n < 2 || y.len() != n {
        return Err(Error::contract("default local kernel needs at least two training rows"));
    }
    let step = n.div_ceil(200);
    let rows = to_rows(z);
    let pick: Vec<usize> = (0..n).step_by(step).collect();
    let mut d = Vec::with_capacity(pick.len() * pick.len() / 2);
    for (a, &i) in pick.iter().enumerate() {
        for &j in &pick[a + 1..] {
            let v = sq_dist(&rows[i * p..(i + 1) * p], &rows[j * p..(j + 1) * p]);
            if v > 0.0 {
                d.push(v);
            }
        }
    }
    if d.is_empty() {
        return Err(Error::Data("all training inputs coincide".into()));
    }
    d.sort_by(f64::total_cmp);
    let l0 = d[d.len() / 10];
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).max(1e-12);
    KernelSpec::isotropic(p, l0, var, 1e-6 * var)
}

pub(crate) fn local_fit_config(spec0: &KernelSpec, family: KernelFamily) -> FitConfig {
    let l0 = spec0.lengthscales[0];
    FitConfig {
        family,
        n_starts: 1,
        lengthscale_bounds: (l0 * 1e-3, l0 * 1e3),
        nugget_bounds: (1e-8, 1.0),
        initial_lengthscale: l0,
        initial_nugget: (spec0.nugget / spec0.signal_variance).clamp(1e-8, 1.0),
        max_iter: 50,
        seed: 0,
    }
}

pub fn local_gp_predict(
    z_train: MatRef<'_, f64>,
    y: &[f64],
    z_star: &[f64],
    config: &LocalConfig,
    spec0: &KernelSpec,
) -> Result<LocalGpTrace> {
    if z_train.nrows() != y.len() {
        return Err(Error::dim(format!("{} training rows but {} responses", z_train.nrows(), y.len())));
    }
    let index = NeighborIndex::new(z_train);
    predict_one(&index, y, z_star, config, spec0)
}

pub fn local_gp_predict_batch(
    z_train: MatRef<'_, f64>,
    y: &[f64],
    z_test: MatRef<'_, f64>,
    config: &LocalConfig,
    spec0: &KernelSpec,
) -> Result<PredictiveDist> {
    if z_train.nrows() != y.len() {
        return Err(Error::dim(format!("{} training rows but {} responses", z_train.nrows(), y.len())));
    }
    let index = NeighborIndex::new(z_train);
    let test = NeighborIndex::new(z_test);
    let out: Vec<(f64, f64)> = (0..test.len())
        .into_par_iter()
        .map(|i| predict_one(&index, y, test.point(i), config, spec0).map(|t| (t.mean, t.variance)))
        .collect::<Result<_>>()?;
    Ok(PredictiveDist { mean: out.iter().map(|v| v.0).collect(), variance: out.iter().map(|v| v.1).collect() })
}

fn predict_one(index: &NeighborIndex, y: &[f64], z_star: &[f64], config: &LocalConfig, spec0: &KernelSpec) -> Result<LocalGpTrace> {
    config.validate()?;
    spec0.validate()?;
    let n = index.len();
    if n == 0 {
        return Err(Error::contract("local GP needs a non-empty training set"));
    }
    if z_star.len() != index.dim() || spec0.dim() != index.dim() {
        return Err(Error::dim(format!(
            "query has {} coordinates, design {}, kernel {}",
            z_star.len(),
            index.dim(),
            spec0.dim()
        )));
    }
    let pool_size = (config.candidate_pool * config.n_max).min(n);
    let mut n_max = config.n_max;
    if pool_size < n_max {
        log::warn!("candidate pool of {pool_size} is smaller than n_max = {n_max}; shrinking the local design");
        n_max = pool_size;
    }
    let kappa = config.kappa.min(n_max);
    let pool = index.nearest(z_star, pool_size, None);

    // greedy growth under spec0 with unit signal variance
    let g = spec0.nugget / spec0.signal_variance;
    let unit = KernelSpec { signal_variance: 1.0, nugget: g, ..spec0.clone() };
    let kfn = |a: &[f64], b: &[f64]| unit.cov(a, b);
    let pts: Vec<&[f64]> = pool.iter().map(|&i| index.point(i)).collect();
    let kss = 1.0;

    // rows of L^{-1} k(D, .) for the target and every pool point
    let mut v_star: Vec<f64> = Vec::with_capacity(n_max);
    let mut v_pool: Vec<Vec<f64>> = vec![Vec::with_capacity(n_max); pts.len()];
    let mut in_design = vec![false; pts.len()];
    let mut design: Vec<usize> = Vec::with_capacity(n_max);
    let mut variances = Vec::with_capacity(n_max - kappa + 1);
    let mut var_star = kss;

    let add = |d: usize,
                   v_star: &mut Vec<f64>,
                   v_pool: &mut Vec<Vec<f64>>,
                   in_design: &mut Vec<bool>,
                   design: &mut Vec<usize>|
     -> Option<f64> {
        let vd = v_pool[d].clone();
        let rem = 1.0 + g - vd.iter().map(|v| v * v).sum::<f64>();
        if !(rem > 1e-14) {
            return None;
        }
        let diag = rem.sqrt();
        let ks = kfn(z_star, pts[d]) - dot(v_star, &vd);
        let vs = ks / diag;
        v_star.push(vs);
        for (c, vc) in v_pool.iter_mut().enumerate() {
            if in_design[c] {
                continue;
            }
            let kc = if c == d { 1.0 + g } else { kfn(pts[c], pts[d]) };
            let e = (kc - dot(vc, &vd)) / diag;
            vc.push(e);
        }
        in_design[d] = true;
        design.push(d);
        Some(vs * vs)
    };

    for d in 0..kappa {
        match add(d, &mut v_star, &mut v_pool, &mut in_design, &mut design) {
            Some(red) => var_star -= red,
            None => {
                in_design[d] = true;
                log::debug!("seed neighbor {} is numerically redundant; skipped", pool[d]);
            }
        }
    }
    variances.push(var_star.max(0.0));

    while design.len() < n_max {
        let mut best: Option<(f64, usize)> = None;
        for c in 0..pts.len() {
            if in_design[c] {
                continue;
            }
            let vc = &v_pool[c];
            let var_c = 1.0 + g - vc.iter().map(|v| v * v).sum::<f64>();
            if !(var_c > 1e-14) {
                continue;
            }
            let cov = kfn(z_star, pts[c]) - dot(&v_star, vc);
            let red = cov * cov / var_c;
            if best.is_none_or(|(b, _)| red > b) {
                best = Some((red, c));
            }
        }
        let Some((_, c)) = best else { break };
        match add(c, &mut v_star, &mut v_pool, &mut in_design, &mut design) {
            Some(red) => {
                var_star -= red;
                variances.push(var_star.max(0.0));
            }
            None => in_design[c] = true,
        }
    }

    let idx: Vec<usize> = design.iter().map(|&d| pool[d]).collect();
    let p = index.dim();
    let xd = Mat::from_fn(idx.len(), p, |i, k| index.point(idx[i])[k]);
    let yd: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let model = fit_gp(xd.as_ref(), &yd, &local_fit_config(spec0, KernelFamily::IsotropicGaussian))?;
    let q = Mat::from_fn(1, p, |_, k| z_star[k]);
    let pred = model.predict(q.as_ref(), true)?;
    Ok(LocalGpTrace { mean: pred.mean[0], variance: pred.variance[0], design: idx, variances })
}
