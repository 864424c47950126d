//! Linear prewarpings `Z = X L^T` built from sensitivity analyses, and
//! truncation-rank selection by leave-one-out k-NN BIC.

use std::fmt;
use std::str::FromStr;

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_desc;
use crate::local::loo_knn_mse;
use crate::sensitivity::{CMatrix, MeasureKind, ScoreMethod, SensitivityScores};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpMethod {
    Ard,
    Range,
    AsLebesgue,
    AsSample,
    Identity,
}

impl WarpMethod {
    pub fn name(&self) -> &'static str {
        match self {
            WarpMethod::Ard => "ard",
            WarpMethod::Range => "range",
            WarpMethod::AsLebesgue => "as-lebesgue",
            WarpMethod::AsSample => "as-sample",
            WarpMethod::Identity => "identity",
        }
    }

    pub fn is_diagonal(&self) -> bool {
        !matches!(self, WarpMethod::AsLebesgue | WarpMethod::AsSample)
    }
}

impl fmt::Display for WarpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WarpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ard" => WarpMethod::Ard,
            "range" => WarpMethod::Range,
            "as-lebesgue" => WarpMethod::AsLebesgue,
            "as-sample" => WarpMethod::AsSample,
            "identity" => WarpMethod::Identity,
            other => return Err(Error::contract(format!("unknown warp method '{other}'"))),
        })
    }
}

/// Provenance of a warp: data size and subbagging settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CreatedFrom {
    pub n: usize,
    #[serde(rename = "B")]
    pub n_bags: usize,
    pub nsub: usize,
    pub measure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WarpTransform {
    pub method: WarpMethod,
    /// Rows ordered by decreasing importance.
    pub l: Mat<f64>,
    /// Descending; squared scale factors for diagonal methods.
    pub eigenvalues: Vec<f64>,
    pub r: usize,
    pub seed: u64,
    pub created_from: CreatedFrom,
}

pub const DEFAULT_EIG_FLOOR: f64 = 1e-12;

impl WarpTransform {
    pub fn dim(&self) -> usize {
        self.l.ncols()
    }

    pub fn identity(p: usize) -> Self {
        WarpTransform {
            method: WarpMethod::Identity,
            l: Mat::identity(p, p),
            eigenvalues: vec![1.0; p],
            r: p,
            seed: 0,
            created_from: CreatedFrom::default(),
        }
    }

    pub fn with_rank(mut self, r: usize) -> Result<Self> {
        check_rank(r, self.dim())?;
        self.r = r;
        Ok(self)
    }

    pub fn with_provenance(mut self, seed: u64, created_from: CreatedFrom) -> Self {
        self.seed = seed;
        self.created_from = created_from;
        self
    }

    pub fn to_document(&self) -> WarpDocument {
        let p = self.dim();
        WarpDocument {
            method: self.method,
            p,
            r: self.r,
            eigenvalues: self.eigenvalues.clone(),
            l: (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| self.l[(i, j)]).collect(),
            seed: self.seed,
            created_from: self.created_from.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<WarpDocument>(s)?.into_transform()
    }
}

/// On-disk layout of a warp; `L` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpDocument {
    pub method: WarpMethod,
    pub p: usize,
    pub r: usize,
    pub eigenvalues: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
    pub seed: u64,
    pub created_from: CreatedFrom,
}

impl WarpDocument {
    pub fn into_transform(self) -> Result<WarpTransform> {
        let p = self.p;
        if p == 0 || self.l.len() != p * p || self.eigenvalues.len() != p {
            return Err(Error::Data(format!(
                "warp document inconsistent: p = {p}, {} L entries, {} eigenvalues",
                self.l.len(),
                self.eigenvalues.len()
            )));
        }
        if self.r == 0 || self.r > p {
            return Err(Error::Data(format!("warp rank {} outside 1..={p}", self.r)));
        }
        if self.l.iter().chain(&self.eigenvalues).any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite entry in warp document".into()));
        }
        Ok(WarpTransform {
            method: self.method,
            l: Mat::from_fn(p, p, |i, j| self.l[i * p + j]),
            eigenvalues: self.eigenvalues,
            r: self.r,
            seed: self.seed,
            created_from: self.created_from,
        })
    }
}

fn check_rank(r: usize, p: usize) -> Result<()> {
    if r == 0 || r > p {
        return Err(Error::contract(format!("rank {r} outside 1..={p}")));
    }
    Ok(())
}

/// Permuted diagonal warp: row `i` scales input `order[i]`, rows sorted by
/// decreasing scale (stable, so ties keep input order).
fn diagonal_warp(method: WarpMethod, scale: Vec<f64>) -> WarpTransform {
    let p = scale.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| scale[b].total_cmp(&scale[a]));
    let mut l = Mat::<f64>::zeros(p, p);
    for (i, &k) in order.iter().enumerate() {
        l[(i, k)] = scale[k];
    }
    WarpTransform {
        method,
        l,
        eigenvalues: order.iter().map(|&k| scale[k] * scale[k]).collect(),
        r: p,
        seed: 0,
        created_from: CreatedFrom::default(),
    }
}

fn check_scores(scores: &SensitivityScores, want: ScoreMethod) -> Result<()> {
    if scores.method != want {
        return Err(Error::contract(format!("expected {want:?} scores, got {:?}", scores.method)));
    }
    if scores.scores.is_empty() {
        return Err(Error::contract("empty sensitivity scores"));
    }
    if let Some(s) = scores.scores.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::contract(format!("sensitivity score {s} is not positive and finite")));
    }
    Ok(())
}

/// `L = diag(1 / sqrt(l_k))` from averaged length-scales.
pub fn build_l_ard(scores: &SensitivityScores) -> Result<WarpTransform> {
    check_scores(scores, ScoreMethod::Ard)?;
    Ok(diagonal_warp(WarpMethod::Ard, scores.scores.iter().map(|l| 1.0 / l.sqrt()).collect()))
}

/// `L = diag(range_k / geometric_mean(range))`.
pub fn build_l_range(scores: &SensitivityScores) -> Result<WarpTransform> {
    check_scores(scores, ScoreMethod::Range)?;
    let s = &scores.scores;
    // summed in sorted order so the result does not depend on input order
    let mut logs: Vec<f64> = s.iter().map(|v| v.ln()).collect();
    logs.sort_by(f64::total_cmp);
    let log_gm = logs.iter().sum::<f64>() / s.len() as f64;
    Ok(diagonal_warp(WarpMethod::Range, s.iter().map(|v| (v.ln() - log_gm).exp()).collect()))
}

/// `L = Lambda^{1/2} U^T` from the eigendecomposition of `C`.
pub fn build_l_as(c: &CMatrix, eig_floor: f64) -> Result<WarpTransform> {
    let method = match c.measure.kind {
        MeasureKind::Lebesgue => WarpMethod::AsLebesgue,
        MeasureKind::Sample => WarpMethod::AsSample,
    };
    build_l_from_matrix(c.matrix.as_ref(), eig_floor, method)
}

pub fn build_l_from_matrix(c: MatRef<'_, f64>, eig_floor: f64, method: WarpMethod) -> Result<WarpTransform> {
    let p = c.nrows();
    if p == 0 || c.ncols() != p {
        return Err(Error::dim(format!("C must be square and non-empty, got {}x{}", c.nrows(), c.ncols())));
    }
    let mut scale = 0.0f64;
    let mut asym = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            if !c[(i, j)].is_finite() {
                return Err(Error::Numerical("non-finite entry in C".into()));
            }
            scale = scale.max(c[(i, j)].abs());
            asym = asym.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    if asym > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::contract(format!("C is not symmetric (max asymmetry {asym:e})")));
    }
    let (vals, mut vecs) = sym_eigen_desc(c)?;
    let lmax = vals[0];
    if !(lmax > 0.0) {
        return Err(Error::Numerical(format!("largest eigenvalue of C is {lmax:e}; no signal detected")));
    }
    let floor = eig_floor.max(0.0) * lmax;
    let eigenvalues: Vec<f64> = vals.iter().map(|v| v.max(floor)).collect();
    for j in 0..p {
        let mut pivot = 0;
        for i in 1..p {
            if vecs[(i, j)].abs() > vecs[(pivot, j)].abs() {
                pivot = i;
            }
        }
        if vecs[(pivot, j)] < 0.0 {
            for i in 0..p {
                vecs[(i, j)] = -vecs[(i, j)];
            }
        }
    }
    let l = Mat::from_fn(p, p, |i, j| eigenvalues[i].sqrt() * vecs[(j, i)]);
    Ok(WarpTransform { method, l, eigenvalues, r: p, seed: 0, created_from: CreatedFrom::default() })
}

/// First `r` columns of `X L^T`.
pub fn apply_warp(x: MatRef<'_, f64>, warp: &WarpTransform, r: usize) -> Result<Mat<f64>> {
    let p = warp.dim();
    check_rank(r, p)?;
    if x.ncols() != p {
        return Err(Error::dim(format!("design has {} columns, warp expects {p}", x.ncols())));
    }
    let lr = warp.l.as_ref().subrows(0, r);
    Ok(x * lr.transpose())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub r: usize,
    /// Candidate ranks `mind..=maxd` with their LOO mse and BIC.
    pub ranks: Vec<usize>,
    pub mse: Vec<f64>,
    pub bic: Vec<f64>,
}

pub const DEFAULT_TRUNCATION_K: usize = 10;

/// `n log(mse) + r log(n)` for each candidate; argmin with ties to the
/// smaller rank. Zero mse is replaced by machine epsilon.
pub fn bic_select(mse: &[f64], ranks: &[usize], n: usize) -> (usize, Vec<f64>) {
    let nf = n as f64;
    let bic: Vec<f64> = mse
        .iter()
        .zip(ranks)
        .map(|(&m, &r)| {
            let m = if m > 0.0 {
                m
            } else {
                log::warn!("leave-one-out mse is zero at rank {r}; using machine epsilon");
                f64::EPSILON
            };
            nf * m.ln() + r as f64 * nf.ln()
        })
        .collect();
    let mut best = 0;
    for i in 1..bic.len() {
        if bic[i] < bic[best] {
            best = i;
        }
    }
    (ranks[best], bic)
}

pub fn select_truncation(z: MatRef<'_, f64>, y: &[f64], mind: usize, maxd: usize, k: usize) -> Result<Truncation> {
    let (n, p) = z.shape();
    if mind == 0 || mind > maxd || maxd > p {
        return Err(Error::contract(format!("need 1 <= mind <= maxd <= {p}, got mind = {mind}, maxd = {maxd}")));
    }
    if n != y.len() {
        return Err(Error::dim(format!("{n} rows but {} responses", y.len())));
    }
    if n <= k {
        return Err(Error::contract(format!("truncation needs n > k (n = {n}, k = {k})")));
    }
    let ranks: Vec<usize> = (mind..=maxd).collect();
    let mse: Vec<f64> = ranks.par_iter().map(|&r| loo_knn_mse(z, y, r, k)).collect::<Result<_>>()?;
    let (r, bic) = bic_select(&mse, &ranks, n);
    Ok(Truncation { r, ranks, mse, bic })
}
