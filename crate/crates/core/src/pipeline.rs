//! End-to-end experiments: data, split, sensitivity warps, truncation and
//! local-model evaluation, repeated over Monte Carlo repetitions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use faer::{Mat, MatRef};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bench::{eval_function, lhs_sample, mse, neg_log_score, TestFunction};
use crate::error::{Error, Result};
use crate::gp::{fit_gp, FitConfig};
use crate::linalg::select_rows;
use crate::local::lagp::default_local_spec;
use crate::local::{knn_predict_batch, local_gp_predict_batch, vecchia_fit, vecchia_predict_batch, LocalConfig};
use crate::sensitivity::{
    ard_from_bags, c_from_bags, draw_bags, fit_bags, subbag_range_with_bags, MeasureSpec, SubbagConfig,
};
use crate::seed;
use crate::warp::{
    apply_warp, build_l_ard, build_l_as, build_l_range, select_truncation, CreatedFrom, WarpDocument, WarpTransform,
    DEFAULT_EIG_FLOOR, DEFAULT_TRUNCATION_K,
};

/// Input transformation named by a label prefix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WarpKind {
    None,
    /// ARD length-scales (`B`).
    Ard,
    /// Posterior range (`R`).
    Range,
    /// Active subspace, uniform measure (`L`).
    AsLebesgue,
    /// Active subspace, sample measure (`S`).
    AsSample,
}

impl WarpKind {
    pub fn prefix(&self) -> &'static str {
        match self {
            WarpKind::None => "",
            WarpKind::Ard => "B",
            WarpKind::Range => "R",
            WarpKind::AsLebesgue => "L",
            WarpKind::AsSample => "S",
        }
    }

    pub fn from_prefix(c: char) -> Option<Self> {
        Some(match c {
            'B' => WarpKind::Ard,
            'R' => WarpKind::Range,
            'L' => WarpKind::AsLebesgue,
            'S' => WarpKind::AsSample,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Knn,
    LocalGp,
    Vecchia,
    SubsetGp,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Knn => "KNN",
            ModelKind::LocalGp => "laGP",
            ModelKind::Vecchia => "vecc",
            ModelKind::SubsetGp => "sGP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "knn" => ModelKind::Knn,
            "lagp" | "local-gp" | "localgp" => ModelKind::LocalGp,
            "vecc" | "vecchia" => ModelKind::Vecchia,
            "sgp" | "subset-gp" => ModelKind::SubsetGp,
            _ => return None,
        })
    }
}

pub const METHOD_GRAMMAR: &str = "method labels are [B|R|L|S][T]-MODEL or MODEL, where MODEL is one of \
KNN, laGP (local-GP), vecc (vecchia), sGP (subset-gp); B = ARD, R = range, L = active subspace (uniform), \
S = active subspace (sample), T = truncation (needs a warp prefix)";

/// One (warp, truncation, model) cell, written like `ST-laGP`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub warp: WarpKind,
    pub truncate: bool,
    pub model: ModelKind,
}

impl MethodSpec {
    pub fn label(&self) -> String {
        let prefix = format!("{}{}", self.warp.prefix(), if self.truncate { "T" } else { "" });
        if prefix.is_empty() {
            self.model.name().to_string()
        } else {
            format!("{prefix}-{}", self.model.name())
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::contract(format!("invalid method label '{s}': {METHOD_GRAMMAR}"));
        let (prefix, model) = match s.split_once('-') {
            // model names may themselves contain a dash
            Some((pre, rest)) if ModelKind::parse(rest).is_some() && ModelKind::parse(s).is_none() => {
                if pre.is_empty() {
                    return Err(bad());
                }
                (pre, rest)
            }
            _ => ("", s),
        };
        let model = ModelKind::parse(model).ok_or_else(bad)?;
        let mut chars = prefix.chars();
        let (warp, truncate) = match (chars.next(), chars.next(), chars.next()) {
            (None, _, _) => (WarpKind::None, false),
            (Some(w), None, _) => (WarpKind::from_prefix(w).ok_or_else(bad)?, false),
            (Some(w), Some('T'), None) => (WarpKind::from_prefix(w).ok_or_else(bad)?, true),
            _ => return Err(bad()),
        };
        Ok(MethodSpec { warp, truncate, model })
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.label()
    }
}

pub fn parse_methods(list: &str) -> Result<Vec<MethodSpec>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Function { function: TestFunction, n: usize },
    Csv { path: PathBuf, response: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub mind: usize,
    /// Defaults to the input dimension.
    pub maxd: Option<usize>,
    pub k: usize,
}

impl Default for TruncationConfig {
    fn default() -> Self {
        TruncationConfig { mind: 1, maxd: None, k: DEFAULT_TRUNCATION_K }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub n_test: usize,
    pub methods: Vec<MethodSpec>,
    pub subbag: SubbagConfig,
    /// Monte Carlo draws for the uniform-measure `C`.
    pub n_mc: usize,
    pub fit: FitConfig,
    pub local: LocalConfig,
    pub truncation: TruncationConfig,
    pub reps: usize,
    pub seed: u64,
    /// Draw a fresh design each repetition (functions only); otherwise only
    /// the split changes.
    pub redraw_design: bool,
    /// Record wall-clock seconds per cell (makes output non-reproducible).
    pub timings: bool,
}

impl ExperimentConfig {
    pub fn new(source: DataSource, n_test: usize, methods: Vec<MethodSpec>) -> Self {
        ExperimentConfig {
            source,
            n_test,
            methods,
            subbag: SubbagConfig::default(),
            n_mc: MeasureSpec::DEFAULT_N_MC,
            fit: FitConfig::default(),
            local: LocalConfig::default(),
            truncation: TruncationConfig::default(),
            reps: 1,
            seed: 0,
            redraw_design: true,
            timings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::contract("at least one method is required"));
        }
        if self.reps == 0 {
            return Err(Error::contract("at least one repetition is required"));
        }
        if self.n_test == 0 {
            return Err(Error::contract("n_test must be at least 1"));
        }
        if let DataSource::Function { function, n } = &self.source {
            function.validate()?;
            if self.n_test + 2 > *n {
                return Err(Error::contract(format!("n_test = {} leaves fewer than 2 training points of n = {n}", self.n_test)));
            }
        }
        if self.subbag.n_bags == 0 || self.subbag.bag_size < 2 {
            return Err(Error::contract("subbagging needs at least one bag of at least 2 points"));
        }
        if self.methods.iter().any(|m| m.warp == WarpKind::AsLebesgue) && self.n_mc == 0 {
            return Err(Error::contract("uniform-measure warps need at least one Monte Carlo draw"));
        }
        self.local.validate()?;
        let t = &self.truncation;
        if t.mind == 0 || t.maxd.is_some_and(|d| d < t.mind) || t.k == 0 {
            return Err(Error::contract("truncation bounds need 1 <= mind <= maxd and k >= 1"));
        }
        Ok(())
    }
}

/// Raw CSV contents: inputs unscaled, responses as read.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Mat<f64>,
    pub y: Vec<f64>,
    pub columns: Vec<String>,
}

pub fn ingest_csv(path: &Path, response: &str) -> Result<Dataset> {
    read_csv(path, response, true).map(|(d, _)| d)
}

/// Like [`ingest_csv`] but the response column may be absent, in which case
/// every column is an input and `y` is empty.
pub fn ingest_csv_inputs(path: &Path, response: &str) -> Result<(Dataset, bool)> {
    read_csv(path, response, false)
}

fn read_csv(path: &Path, response: &str, require_response: bool) -> Result<(Dataset, bool)> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
    let ycol = headers.iter().position(|h| h == response);
    if require_response {
        if headers.len() < 2 {
            return Err(Error::Data(format!("{}: need at least two columns", path.display())));
        }
        if ycol.is_none() {
            return Err(Error::Data(format!("{}: no response column '{response}'", path.display())));
        }
    }
    let columns: Vec<String> = headers.iter().enumerate().filter(|(j, _)| Some(*j) != ycol).map(|(_, h)| h.clone()).collect();
    if columns.is_empty() {
        return Err(Error::Data(format!("{}: no input columns", path.display())));
    }
    let p = columns.len();
    let mut xs: Vec<f64> = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = r + 2;
        if rec.len() != headers.len() {
            return Err(Error::Data(format!("{}: row {row} has {} fields, expected {}", path.display(), rec.len(), headers.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::Data(format!("{}: row {row}, column '{}': '{field}' is not a finite number", path.display(), headers[j]))
            })?;
            if Some(j) == ycol {
                y.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = xs.len() / p;
    if n == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok((Dataset { x: Mat::from_fn(n, p, |i, k| xs[i * p + k]), y, columns }, ycol.is_some()))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Per-column min-max scaling to `[0, 1]`; constant columns map to 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(x: MatRef<'_, f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::contract("cannot fit a scaler on zero rows"));
        }
        let p = x.ncols();
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        for i in 0..x.nrows() {
            for k in 0..p {
                min[k] = min[k].min(x[(i, k)]);
                max[k] = max[k].max(x[(i, k)]);
            }
        }
        for k in 0..p {
            if min[k] == max[k] {
                log::warn!("input column {k} is constant; scaling it to 0.5");
            }
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn transform(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        Mat::from_fn(x.nrows(), x.ncols(), |i, k| {
            let span = self.max[k] - self.min[k];
            if span > 0.0 {
                (x[(i, k)] - self.min[k]) / span
            } else {
                0.5
            }
        })
    }
}

/// Training and test data for one repetition, inputs in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Split {
    pub x_train: Mat<f64>,
    pub y_train: Vec<f64>,
    pub x_test: Mat<f64>,
    pub y_test: Vec<f64>,
    pub scaler: Option<MinMaxScaler>,
}

fn rep_seed(config: &ExperimentConfig, what: &str, rep: usize) -> u64 {
    seed::derive_label(config.seed, &format!("{what}/rep{rep}"))
}

/// Loads or generates the data for `rep` and splits it.
pub fn split_for_rep(config: &ExperimentConfig, dataset: Option<&Dataset>, rep: usize) -> Result<Split> {
    let (x, y, needs_scaling) = match (&config.source, dataset) {
        (DataSource::Function { function, n }, _) => {
            let design_rep = if config.redraw_design { rep } else { 0 };
            let x = lhs_sample(*n, function.dim(), rep_seed(config, "design", design_rep));
            let y = eval_function(function, x.as_ref())?;
            (x, y, false)
        }
        (DataSource::Csv { .. }, Some(d)) => (d.x.clone(), d.y.clone(), true),
        (DataSource::Csv { path, response }, None) => {
            let d = ingest_csv(path, response)?;
            (d.x, d.y, true)
        }
    };
    let n = y.len();
    if config.n_test + 2 > n {
        return Err(Error::Data(format!("n_test = {} leaves fewer than 2 training rows of {n}", config.n_test)));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(rep_seed(config, "split", rep)));
    let (test_idx, train_idx) = perm.split_at(config.n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let x_train_raw = select_rows(x.as_ref(), &train_idx);
    let x_test_raw = select_rows(x.as_ref(), &test_idx);
    let (x_train, x_test, scaler) = if needs_scaling {
        let s = MinMaxScaler::fit(x_train_raw.as_ref())?;
        (s.transform(x_train_raw.as_ref()), s.transform(x_test_raw.as_ref()), Some(s))
    } else {
        (x_train_raw, x_test_raw, None)
    };
    Ok(Split {
        x_train,
        y_train: train_idx.iter().map(|&i| y[i]).collect(),
        x_test,
        y_test: test_idx.iter().map(|&i| y[i]).collect(),
        scaler,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub rep: usize,
    /// `None` when the cell failed.
    pub mse: Option<f64>,
    pub neg_score: Option<f64>,
    pub r_used: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub seconds: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarpRecord {
    pub rep: usize,
    pub warp: String,
    pub transform: WarpDocument,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub label: String,
    pub median_mse: Option<f64>,
    pub median_neg_score: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub labels: Vec<LabelSummary>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub reports: Vec<MetricsReport>,
    pub warps: Vec<WarpRecord>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) })
}

impl ExperimentResult {
    pub fn summary(&self) -> Summary {
        let labels = self
            .config
            .methods
            .iter()
            .map(|m| {
                let label = m.label();
                let rows: Vec<&MetricsReport> = self.reports.iter().filter(|r| r.label == label).collect();
                let mut mses: Vec<f64> = rows.iter().filter_map(|r| r.mse).collect();
                let mut scores: Vec<f64> = rows.iter().filter_map(|r| r.neg_score).collect();
                LabelSummary {
                    n_ok: mses.len(),
                    n_failed: rows.len() - mses.len(),
                    median_mse: median(&mut mses),
                    median_neg_score: median(&mut scores),
                    label,
                }
            })
            .collect();
        Summary { config: self.config.clone(), labels }
    }

    pub fn reports_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn median_mse(&self, label: &str) -> Option<f64> {
        self.summary().labels.into_iter().find(|l| l.label == label).and_then(|l| l.median_mse)
    }

    pub fn median_neg_score(&self, label: &str) -> Option<f64> {
        self.summary().labels.into_iter().find(|l| l.label == label).and_then(|l| l.median_neg_score)
    }
}

/// Warps requested by `config`, computed from training data only. Every
/// fitted warp has rank `p`; failures are kept per warp kind.
pub fn compute_warps(
    config: &ExperimentConfig,
    x_train: MatRef<'_, f64>,
    y_train: &[f64],
    rep: usize,
) -> Vec<(WarpKind, Result<WarpTransform>)> {
    let mut kinds: Vec<WarpKind> = config.methods.iter().map(|m| m.warp).filter(|w| *w != WarpKind::None).collect();
    kinds.sort();
    kinds.dedup();
    if kinds.is_empty() {
        return Vec::new();
    }
    let n = x_train.nrows();
    let bag_size = config.subbag.bag_size.min(n);
    if bag_size < config.subbag.bag_size {
        log::warn!("bag size {} exceeds {n} training rows; using {bag_size}", config.subbag.bag_size);
    }
    let bags = SubbagConfig { n_bags: config.subbag.n_bags, bag_size, seed: seed::derive(config.subbag.seed, rep as u64) };
    let fit = config.fit.clone().with_seed(seed::derive(config.fit.seed, rep as u64));
    let measure_seed = rep_seed(config, "measure", rep);
    let provenance = |measure: Option<&str>| CreatedFrom { n, n_bags: bags.n_bags, nsub: bag_size, measure: measure.map(str::to_string) };

    let sets = draw_bags(n, &bags);
    let needs_gp = kinds.iter().any(|k| matches!(k, WarpKind::Ard | WarpKind::AsLebesgue | WarpKind::AsSample));
    let fits = match (&sets, needs_gp) {
        (Ok(s), true) => Some(fit_bags(x_train, y_train, s, &fit)),
        _ => None,
    };
    kinds
        .into_iter()
        .map(|kind| {
            let built = (|| -> Result<WarpTransform> {
                let sets = sets.as_ref().map_err(Error::duplicate)?;
                let fitted = || fits.as_ref().expect("bag fits exist for GP warps").as_ref().map_err(Error::duplicate);
                let w = match kind {
                    WarpKind::None => unreachable!(),
                    WarpKind::Ard => build_l_ard(&ard_from_bags(fitted()?))?.with_provenance(fit.seed, provenance(None)),
                    WarpKind::Range => {
                        build_l_range(&subbag_range_with_bags(x_train, y_train, sets, &fit)?)?.with_provenance(fit.seed, provenance(None))
                    }
                    WarpKind::AsLebesgue => {
                        let c = c_from_bags(fitted()?, &MeasureSpec::lebesgue(config.n_mc, measure_seed))?;
                        build_l_as(&c, DEFAULT_EIG_FLOOR)?.with_provenance(fit.seed, provenance(Some("lebesgue")))
                    }
                    WarpKind::AsSample => {
                        let c = c_from_bags(fitted()?, &MeasureSpec::sample())?;
                        build_l_as(&c, DEFAULT_EIG_FLOOR)?.with_provenance(fit.seed, provenance(Some("sample")))
                    }
                };
                Ok(w)
            })();
            (kind, built)
        })
        .collect()
}

fn cell_seed(config: &ExperimentConfig, label: &str, rep: usize) -> u64 {
    seed::derive_label(config.seed, &format!("{label}/rep{rep}"))
}

struct CellOutput {
    mse: f64,
    neg_score: Option<f64>,
}

fn run_cell(config: &ExperimentConfig, model: ModelKind, z_train: MatRef<'_, f64>, y_train: &[f64], z_test: MatRef<'_, f64>, y_test: &[f64], seed: u64) -> Result<CellOutput> {
    let local = LocalConfig { seed, ..config.local.clone() };
    match model {
        ModelKind::Knn => {
            let k = local.k.min(y_train.len());
            let pred = knn_predict_batch(z_train, y_train, z_test, k)?;
            Ok(CellOutput { mse: mse(&pred, y_test)?, neg_score: None })
        }
        ModelKind::LocalGp => {
            let spec0 = default_local_spec(z_train, y_train)?;
            let pred = local_gp_predict_batch(z_train, y_train, z_test, &local, &spec0)?;
            Ok(CellOutput { mse: mse(&pred.mean, y_test)?, neg_score: Some(neg_log_score(&pred, y_test)?) })
        }
        ModelKind::Vecchia => {
            let spec0 = default_local_spec(z_train, y_train)?;
            let local = LocalConfig { cond_size: local.cond_size.min(y_train.len() - 1), ..local };
            let model = vecchia_fit(z_train, y_train, &local, &spec0)?;
            let pred = vecchia_predict_batch(&model, z_test)?;
            Ok(CellOutput { mse: mse(&pred.mean, y_test)?, neg_score: Some(neg_log_score(&pred, y_test)?) })
        }
        ModelKind::SubsetGp => {
            let n = y_train.len();
            let size = config.subbag.bag_size.min(n);
            let mut idx = rand::seq::index::sample(&mut seed::rng(seed), n, size).into_vec();
            idx.sort_unstable();
            let xs = select_rows(z_train, &idx);
            let ys: Vec<f64> = idx.iter().map(|&i| y_train[i]).collect();
            let gp = fit_gp(xs.as_ref(), &ys, &config.fit.clone().with_seed(seed))?;
            let pred = gp.predict(z_test, true)?;
            Ok(CellOutput { mse: mse(&pred.mean, y_test)?, neg_score: Some(neg_log_score(&pred, y_test)?) })
        }
    }
}

/// Runs every method cell for every repetition. Cell failures are recorded
/// in the report rather than aborting the run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let dataset = match &config.source {
        DataSource::Csv { path, response } => Some(ingest_csv(path, response)?),
        DataSource::Function { .. } => None,
    };
    let mut reports = Vec::new();
    let mut warps = Vec::new();
    for rep in 0..config.reps {
        let split = split_for_rep(config, dataset.as_ref(), rep)?;
        let p = split.x_train.ncols();
        let (n_train, n_test) = (split.y_train.len(), split.y_test.len());
        let built = compute_warps(config, split.x_train.as_ref(), &split.y_train, rep);

        // truncation rank per warp, shared by every model using that warp
        let mut ranks: Vec<(WarpKind, Result<usize>)> = Vec::new();
        for (kind, w) in &built {
            if !config.methods.iter().any(|m| m.warp == *kind && m.truncate) {
                continue;
            }
            let r = w.as_ref().map_err(Error::duplicate).and_then(|w| {
                let z = apply_warp(split.x_train.as_ref(), w, p)?;
                let maxd = config.truncation.maxd.unwrap_or(p).min(p);
                let mind = config.truncation.mind.min(maxd);
                Ok(select_truncation(z.as_ref(), &split.y_train, mind, maxd, config.truncation.k)?.r)
            });
            ranks.push((*kind, r));
        }
        for (kind, w) in &built {
            match w {
                Ok(w) => {
                    let mut w = w.clone();
                    if let Some((_, Ok(r))) = ranks.iter().find(|(k, _)| k == kind) {
                        w.r = *r;
                    }
                    warps.push(WarpRecord { rep, warp: kind.prefix().to_string(), transform: w.to_document() });
                }
                Err(e) => log::warn!("rep {rep}: warp {} failed: {e}", kind.prefix()),
            }
        }

        for method in &config.methods {
            let label = method.label();
            let seed = cell_seed(config, &label, rep);
            let start = Instant::now();
            let mut r_used = None;
            let outcome = (|| -> Result<CellOutput> {
                let (z_train, z_test) = if method.warp == WarpKind::None {
                    r_used = Some(p);
                    (split.x_train.clone(), split.x_test.clone())
                } else {
                    let w = built
                        .iter()
                        .find(|(k, _)| *k == method.warp)
                        .map(|(_, w)| w)
                        .expect("every requested warp was built")
                        .as_ref()
                        .map_err(Error::duplicate)?;
                    let r = if method.truncate {
                        ranks.iter().find(|(k, _)| *k == method.warp).expect("rank computed").1.as_ref().map(|r| *r).map_err(Error::duplicate)?
                    } else {
                        p
                    };
                    r_used = Some(r);
                    (apply_warp(split.x_train.as_ref(), w, r)?, apply_warp(split.x_test.as_ref(), w, r)?)
                };
                run_cell(config, method.model, z_train.as_ref(), &split.y_train, z_test.as_ref(), &split.y_test, seed)
            })();
            let seconds = config.timings.then(|| start.elapsed().as_secs_f64());
            let report = match outcome {
                Ok(c) => MetricsReport {
                    label,
                    rep,
                    mse: Some(c.mse),
                    neg_score: c.neg_score,
                    r_used,
                    n_train,
                    n_test,
                    seconds,
                    seed,
                    error: None,
                },
                Err(e) => {
                    log::warn!("rep {rep}: {label} failed: {e}");
                    MetricsReport { label, rep, mse: None, neg_score: None, r_used, n_train, n_test, seconds, seed, error: Some(e.to_string()) }
                }
            };
            reports.push(report);
        }
    }
    Ok(ExperimentResult { config: config.clone(), reports, warps })
}
