//! Vecchia-style GP: the joint likelihood factored into conditionals on up
//! to `m` nearest earlier-ordered neighbors.

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LocalConfig, NeighborIndex};
use crate::error::{Error, Result};
use crate::gp::{standardize, PredictiveDist};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::{sq_dist, Cholesky};
use crate::optim::{nelder_mead_bounded, Bounds};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ordering {
    Maxmin,
    Coordinate,
    Random,
}

/// Point order: maxmin starts at the medoid and repeatedly takes the point
/// farthest from those already chosen.
pub fn order_points(index: &NeighborIndex, ordering: Ordering, seed: u64) -> Vec<usize> {
    let n = index.len();
    match ordering {
        Ordering::Coordinate => {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| index.point(a)[0].total_cmp(&index.point(b)[0]));
            o
        }
        Ordering::Random => {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut seed::rng(seed));
            o
        }
        Ordering::Maxmin => {
            if n == 0 {
                return Vec::new();
            }
            let total: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| (0..n).map(|j| sq_dist(index.point(i), index.point(j)).sqrt()).sum())
                .collect();
            let first = (0..n).min_by(|&a, &b| total[a].total_cmp(&total[b])).unwrap_or(0);
            let mut order = Vec::with_capacity(n);
            let mut chosen = vec![false; n];
            let mut mind = vec![f64::INFINITY; n];
            let mut next = first;
            for _ in 0..n {
                order.push(next);
                chosen[next] = true;
                let c = index.point(next);
                let mut best: Option<(f64, usize)> = None;
                for i in 0..n {
                    if chosen[i] {
                        continue;
                    }
                    mind[i] = mind[i].min(sq_dist(index.point(i), c));
                    if best.is_none_or(|(b, _)| mind[i] > b) {
                        best = Some((mind[i], i));
                    }
                }
                match best {
                    Some((_, i)) => next = i,
                    None => break,
                }
            }
            order
        }
    }
}

/// For position `i` of `order`, the up to `m` nearest points among
/// `order[..i]` (training indices).
pub fn conditioning_sets(index: &NeighborIndex, order: &[usize], m: usize) -> Vec<Vec<usize>> {
    (0..order.len())
        .into_par_iter()
        .map(|i| {
            let zi = index.point(order[i]);
            let mut cand: Vec<(f64, usize)> = order[..i].iter().map(|&j| (sq_dist(zi, index.point(j)), j)).collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            let k = m.min(cand.len());
            if k > 0 && k < cand.len() {
                cand.select_nth_unstable_by(k - 1, cmp);
            }
            cand.truncate(k);
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// Conditional mean and variance (including nugget) of the response at `z`
/// given responses at `cond`.
fn conditional(index: &NeighborIndex, y: &[f64], spec: &KernelSpec, beta0: f64, z: &[f64], cond: &[usize]) -> Result<(f64, f64)> {
    let prior = spec.signal_variance + spec.nugget;
    if cond.is_empty() {
        return Ok((beta0, prior));
    }
    let m = cond.len();
    let k = Mat::from_fn(m, m, |a, b| {
        let v = spec.cov(index.point(cond[a]), index.point(cond[b]));
        if a == b { v + spec.nugget } else { v }
    });
    let chol = Cholesky::new_jittered(k.as_ref(), spec.signal_variance)?;
    let kv: Vec<f64> = cond.iter().map(|&j| spec.cov(z, index.point(j))).collect();
    let w = chol.forward_vec(&kv);
    let r: Vec<f64> = cond.iter().map(|&j| y[j] - beta0).collect();
    let a = chol.solve_vec(&r);
    let mean = beta0 + kv.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>();
    let var = prior - w.iter().map(|v| v * v).sum::<f64>();
    Ok((mean, var.max(spec.nugget).max(f64::MIN_POSITIVE)))
}

/// Sum of Gaussian log conditionals over the ordering.
pub fn vecchia_log_likelihood(
    spec: &KernelSpec,
    beta0: f64,
    z: MatRef<'_, f64>,
    y: &[f64],
    order: &[usize],
    sets: &[Vec<usize>],
) -> Result<f64> {
    spec.validate()?;
    if z.nrows() != y.len() || order.len() != y.len() || sets.len() != y.len() {
        return Err(Error::dim("design, responses, ordering and conditioning sets must agree in length"));
    }
    let index = NeighborIndex::new(z);
    log_lik_terms(&index, y, spec, beta0, order, sets).map(|t| t.iter().map(|(r2, v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + r2 / v)).sum())
}

/// Per-point (squared residual, conditional variance).
fn log_lik_terms(index: &NeighborIndex, y: &[f64], spec: &KernelSpec, beta0: f64, order: &[usize], sets: &[Vec<usize>]) -> Result<Vec<(f64, f64)>> {
    order
        .par_iter()
        .zip(sets)
        .map(|(&i, cond)| {
            let (mu, var) = conditional(index, y, spec, beta0, index.point(i), cond)?;
            Ok(((y[i] - mu).powi(2), var))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct VecchiaModel {
    index: NeighborIndex,
    y: Vec<f64>,
    spec: KernelSpec,
    beta0: f64,
    cond_size: usize,
    order: Vec<usize>,
    sets: Vec<Vec<usize>>,
    log_likelihood: f64,
}

impl VecchiaModel {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn conditioning_sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn cond_size(&self) -> usize {
        self.cond_size
    }
}

/// Refine `spec0` by maximizing the Vecchia likelihood. Responses are
/// standardized, the mean is fixed at zero on that scale and the signal
/// variance is profiled out.
pub fn vecchia_fit(z: MatRef<'_, f64>, y: &[f64], config: &LocalConfig, spec0: &KernelSpec) -> Result<VecchiaModel> {
    config.validate()?;
    spec0.validate()?;
    let (n, p) = z.shape();
    if y.len() != n {
        return Err(Error::dim(format!("{n} training rows but {} responses", y.len())));
    }
    if spec0.dim() != p {
        return Err(Error::dim(format!("kernel has {} inputs, design has {p}", spec0.dim())));
    }
    if n < 2 || config.cond_size >= n {
        return Err(Error::contract(format!("conditioning-set size {} must be below n = {n}", config.cond_size)));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite response".into()));
    }
    let index = NeighborIndex::new(z);
    let order = order_points(&index, config.ordering, config.seed);
    let sets = conditioning_sets(&index, &order, config.cond_size);
    let (mean, sd) = standardize(y);
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();

    let nl = match spec0.family {
        KernelFamily::SeparableGaussian => p,
        KernelFamily::IsotropicGaussian => 1,
    };
    let make = |theta: &[f64]| -> KernelSpec {
        let ls = match spec0.family {
            KernelFamily::SeparableGaussian => theta[..p].iter().map(|t| t.exp()).collect(),
            KernelFamily::IsotropicGaussian => vec![theta[0].exp(); p],
        };
        let g = theta[nl].exp();
        KernelSpec { family: spec0.family, lengthscales: ls, signal_variance: 1.0, nugget: g }
    };
    // profiled sigma^2 = mean of r_i^2 / v_i; v_i scales with sigma^2
    let objective = |theta: &[f64]| -> Option<f64> {
        let terms = log_lik_terms(&index, &ys, &make(theta), 0.0, &order, &sets).ok()?;
        let s2 = terms.iter().map(|(r2, v)| r2 / v).sum::<f64>() / n as f64;
        if !(s2 > 0.0) {
            return None;
        }
        let logdet: f64 = terms.iter().map(|(_, v)| v.ln()).sum();
        let nll = 0.5 * (n as f64 * (2.0 * std::f64::consts::PI * s2).ln() + logdet + n as f64);
        nll.is_finite().then_some(nll)
    };
    let mut x0: Vec<f64> = (0..nl)
        .map(|k| match spec0.family {
            KernelFamily::SeparableGaussian => spec0.lengthscales[k].ln(),
            KernelFamily::IsotropicGaussian => spec0.lengthscales[0].ln(),
        })
        .collect();
    x0.push((spec0.nugget / spec0.signal_variance).clamp(1e-8, 1.0).ln());
    let span = 1e3f64.ln();
    let mut lo: Vec<f64> = x0[..nl].iter().map(|v| v - span).collect();
    let mut hi: Vec<f64> = x0[..nl].iter().map(|v| v + span).collect();
    lo.push(1e-8f64.ln());
    hi.push(0.0);
    let bounds = Bounds::new(lo, hi);
    bounds.clamp(&mut x0);
    let best = nelder_mead_bounded(objective, &x0, &bounds, 0.5, 60 * (nl + 1) * (nl + 1))
        .ok_or_else(|| Error::Fit("Vecchia likelihood undefined at every trial point".into()))?;

    let unit = make(&best.x);
    let terms = log_lik_terms(&index, &ys, &unit, 0.0, &order, &sets)?;
    let s2 = terms.iter().map(|(r2, v)| r2 / v).sum::<f64>() / n as f64;
    let signal_variance = s2 * sd * sd;
    let spec = KernelSpec { signal_variance, nugget: unit.nugget * signal_variance, ..unit };
    let log_likelihood = vecchia_log_likelihood(&spec, mean, z, y, &order, &sets)?;
    Ok(VecchiaModel {
        index,
        y: y.to_vec(),
        spec,
        beta0: mean,
        cond_size: config.cond_size,
        order,
        sets,
        log_likelihood,
    })
}

/// Conditions on the `m` nearest training points; variance includes the
/// nugget.
pub fn vecchia_predict(model: &VecchiaModel, z_star: &[f64]) -> Result<(f64, f64)> {
    if z_star.len() != model.index.dim() {
        return Err(Error::dim(format!("query has {} coordinates, model has {}", z_star.len(), model.index.dim())));
    }
    let cond = model.index.nearest(z_star, model.cond_size.min(model.index.len()), None);
    let mut cond_sorted = cond;
    cond_sorted.sort_unstable();
    conditional(&model.index, &model.y, &model.spec, model.beta0, z_star, &cond_sorted)
}

pub fn vecchia_predict_batch(model: &VecchiaModel, z_test: MatRef<'_, f64>) -> Result<PredictiveDist> {
    let test = NeighborIndex::new(z_test);
    let out: Vec<(f64, f64)> = (0..test.len())
        .into_par_iter()
        .map(|i| vecchia_predict(model, test.point(i)))
        .collect::<Result<_>>()?;
    Ok(PredictiveDist { mean: out.iter().map(|v| v.0).collect(), variance: out.iter().map(|v| v.1).collect() })
}

impl VecchiaModel {
    /// Same model with a different prediction conditioning-set size.
    pub fn with_cond_size(mut self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::contract("conditioning-set size must be at least 1"));
        }
        self.cond_size = m;
        Ok(self)
    }
}
