//! `prewarp` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use faer::Mat;
use prewarp::bench::{eval_function, lhs_sample, mse, neg_log_score, TestFunction};
use prewarp::gp::{fit_gp, FitConfig, PredictiveDist};
use prewarp::local::lagp::default_local_spec;
use prewarp::local::{knn_predict_batch, local_gp_predict_batch, vecchia_fit, vecchia_predict_batch, LocalConfig, Ordering};
use prewarp::pipeline::{
    compute_warps, ingest_csv, ingest_csv_inputs, median, parse_methods, run_experiment, DataSource, ExperimentConfig, MetricsReport,
    MinMaxScaler, ModelKind, TruncationConfig, WarpKind,
};
use prewarp::sensitivity::{MeasureSpec, SubbagConfig};
use prewarp::warp::{apply_warp, select_truncation, WarpTransform, DEFAULT_TRUNCATION_K};
use prewarp::{seed, Error};

#[derive(Parser, Debug)]
#[command(name = "prewarp", version, about = "Sensitivity prewarping for local surrogate models")]
struct Cli {
    /// Worker threads (falls back to PREWARP_THREADS, then all cores).
    #[arg(long, global = true, env = "PREWARP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write an LHS design and test-function responses as CSV.
    GenData(GenDataArgs),
    /// Fit a prewarping transform and write it as JSON.
    Warp(WarpArgs),
    /// Select a truncation rank for a warp by leave-one-out k-NN BIC.
    Truncate(TruncateArgs),
    /// Predict test rows with a local model, optionally on warped inputs.
    Predict(PredictArgs),
    /// Run a full experiment and emit one JSON report per cell and repetition.
    Run(RunArgs),
    /// Print a warp file or a report file.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Clone)]
struct SourceArgs {
    /// Test function: borehole, robot-arm, piston, ridge2d, linear-embed.
    #[arg(long = "fn", conflicts_with = "csv")]
    function: Option<String>,
    /// Input dimension for linear-embed.
    #[arg(long)]
    dim: Option<usize>,
    /// CSV with a header row; non-response columns are inputs.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    response: String,
    /// Design size for a test function.
    #[arg(long, default_value_t = 1000)]
    n: usize,
}

#[derive(Args, Debug, Clone)]
struct BagArgs {
    #[arg(long, default_value_t = 5)]
    bags: usize,
    #[arg(long, default_value_t = 1500)]
    bag_size: usize,
    /// Monte Carlo draws for the uniform measure.
    #[arg(long, default_value_t = MeasureSpec::DEFAULT_N_MC)]
    mc: usize,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WarpLetter {
    B,
    R,
    L,
    S,
}

impl WarpLetter {
    fn kind(self) -> WarpKind {
        match self {
            WarpLetter::B => WarpKind::Ard,
            WarpLetter::R => WarpKind::Range,
            WarpLetter::L => WarpKind::AsLebesgue,
            WarpLetter::S => WarpKind::AsSample,
        }
    }
}

#[derive(Args, Debug)]
struct WarpArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    bag: BagArgs,
    #[arg(long, value_enum, ignore_case = true)]
    method: WarpLetter,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TruncateArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    warp: PathBuf,
    #[arg(long, default_value_t = 1)]
    mind: usize,
    #[arg(long)]
    maxd: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_TRUNCATION_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the warp with the selected rank here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct LocalArgs {
    /// k-NN neighbors.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Local GP seed design size.
    #[arg(long, default_value_t = 6)]
    kappa: usize,
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    /// Local GP candidate pool multiplier.
    #[arg(long, default_value_t = 10)]
    pool: usize,
    /// Vecchia conditioning-set size.
    #[arg(long, default_value_t = 30)]
    cond_size: usize,
    #[arg(long, value_enum, default_value_t = OrderingArg::Maxmin)]
    ordering: OrderingArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OrderingArg {
    Maxmin,
    Coordinate,
    Random,
}

impl LocalArgs {
    fn config(&self, seed: u64) -> LocalConfig {
        LocalConfig {
            k: self.k,
            kappa: self.kappa,
            n_max: self.n_max,
            cond_size: self.cond_size,
            candidate_pool: self.pool,
            ordering: match self.ordering {
                OrderingArg::Maxmin => Ordering::Maxmin,
                OrderingArg::Coordinate => Ordering::Coordinate,
                OrderingArg::Random => Ordering::Random,
            },
            seed,
            ..LocalConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Training CSV.
    #[arg(long)]
    train: PathBuf,
    /// Test CSV; its response column is optional.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
    /// Warp JSON applied to both sets (after min-max scaling on training rows).
    #[arg(long)]
    warp: Option<PathBuf>,
    /// Rank to keep; defaults to the warp's stored rank.
    #[arg(long)]
    r: Option<usize>,
    /// KNN, laGP, vecc or sGP.
    #[arg(long, default_value = "KNN")]
    model: String,
    #[command(flatten)]
    local: LocalArgs,
    #[arg(long, default_value_t = 1500)]
    bag_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    bag: BagArgs,
    #[command(flatten)]
    local: LocalArgs,
    #[arg(long, default_value_t = 200)]
    n_test: usize,
    /// Comma-separated labels such as KNN,S-KNN,ST-laGP.
    #[arg(long, default_value = "KNN,S-KNN")]
    methods: String,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    mind: usize,
    #[arg(long)]
    maxd: Option<usize>,
    /// Neighbors for truncation selection.
    #[arg(long, default_value_t = DEFAULT_TRUNCATION_K)]
    trunc_k: usize,
    /// Keep one design across repetitions and redraw only the split.
    #[arg(long)]
    no_redraw: bool,
    /// Record wall-clock seconds per cell (output is then not reproducible).
    #[arg(long)]
    timings: bool,
    /// Report lines go here instead of stdout; a summary and the warps are
    /// written next to it as FILE.summary.json and FILE.warps.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    file: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).target(env_logger::Target::Stderr).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    faer::set_global_parallelism(faer::Par::Seq);
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Warp(a) => warp(a),
        Command::Truncate(a) => truncate(a),
        Command::Predict(a) => predict(a),
        Command::Run(a) => run(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Contract(_) => 1,
        Error::Dimension(_) | Error::Data(_) | Error::Io(_) | Error::Json(_) => 2,
        Error::Numerical(_) | Error::Fit(_) => 3,
    }
}

fn parse_function(name: &str, dim: Option<usize>) -> Result<TestFunction, Error> {
    let f: TestFunction = name.parse().map_err(|e: Error| Error::Contract(e.to_string()))?;
    let f = match (f, dim) {
        (TestFunction::LinearEmbed { .. }, Some(d)) => TestFunction::LinearEmbed { dim: d },
        (_, Some(_)) => return Err(Error::Contract("--dim only applies to linear-embed".into())),
        (f, None) => f,
    };
    f.validate()?;
    Ok(f)
}

fn data_source(s: &SourceArgs) -> Result<DataSource, Error> {
    match (&s.function, &s.csv) {
        (Some(name), None) => Ok(DataSource::Function { function: parse_function(name, s.dim)?, n: s.n }),
        (None, Some(path)) => Ok(DataSource::Csv { path: path.clone(), response: s.response.clone() }),
        _ => Err(Error::Contract("give exactly one of --fn or --csv".into())),
    }
}

/// Inputs scaled to the unit cube and responses; functions use an LHS design.
fn load_unit(s: &SourceArgs, seed_value: u64) -> Result<(Mat<f64>, Vec<f64>), Error> {
    match data_source(s)? {
        DataSource::Function { function, n } => {
            if n == 0 {
                return Err(Error::Contract("--n must be at least 1".into()));
            }
            let x = lhs_sample(n, function.dim(), seed::derive_label(seed_value, "design"));
            let y = eval_function(&function, x.as_ref())?;
            Ok((x, y))
        }
        DataSource::Csv { path, response } => {
            let d = ingest_csv(&path, &response)?;
            let x = MinMaxScaler::fit(d.x.as_ref())?.transform(d.x.as_ref());
            Ok((x, d.y))
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn gen_data(a: GenDataArgs) -> Result<(), Error> {
    if a.source.csv.is_some() {
        return Err(Error::Contract("gen-data needs --fn".into()));
    }
    let (x, y) = load_unit(&a.source, a.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let p = x.ncols();
    let mut header: Vec<String> = (1..=p).map(|k| format!("x{k}")).collect();
    header.push("y".into());
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for i in 0..x.nrows() {
        let mut row: Vec<String> = (0..p).map(|k| x[(i, k)].to_string()).collect();
        row.push(y[i].to_string());
        w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    emit(a.out.as_deref(), &String::from_utf8_lossy(&bytes))
}

fn print_spectrum(w: &WarpTransform) {
    eprintln!("method {}  p {}  r {}", w.method, w.dim(), w.r);
    for (i, v) in w.eigenvalues.iter().enumerate() {
        eprintln!("  lambda[{}] = {v:.6e}", i + 1);
    }
    if w.eigenvalues.len() > 1 && w.eigenvalues[1] > 0.0 {
        eprintln!("  lambda[1]/lambda[2] = {:.3}", w.eigenvalues[0] / w.eigenvalues[1]);
    }
}

fn warp(a: WarpArgs) -> Result<(), Error> {
    let (x, y) = load_unit(&a.source, a.seed)?;
    let methods = vec![format!("{}-KNN", a.method.kind().prefix()).parse()?];
    let mut config = ExperimentConfig::new(DataSource::Function { function: TestFunction::Ridge2d, n: 3 }, 1, methods);
    config.subbag = SubbagConfig { n_bags: a.bag.bags, bag_size: a.bag.bag_size, seed: a.seed };
    config.fit = FitConfig::default().with_seed(a.seed);
    config.n_mc = a.bag.mc;
    config.seed = a.seed;
    let (_, built) = compute_warps(&config, x.as_ref(), &y, 0).into_iter().next().expect("one warp requested");
    let w = built?;
    print_spectrum(&w);
    emit(a.out.as_deref(), &(w.to_json()? + "\n"))
}

fn read_warp(path: &Path) -> Result<WarpTransform, Error> {
    WarpTransform::from_json(&fs::read_to_string(path)?)
}

fn truncate(a: TruncateArgs) -> Result<(), Error> {
    let w = read_warp(&a.warp)?;
    let (x, y) = load_unit(&a.source, a.seed)?;
    let p = w.dim();
    let z = apply_warp(x.as_ref(), &w, p)?;
    let t = select_truncation(z.as_ref(), &y, a.mind, a.maxd.unwrap_or(p), a.k)?;
    eprintln!("selected r = {}", t.r);
    for ((r, m), b) in t.ranks.iter().zip(&t.mse).zip(&t.bic) {
        eprintln!("  r = {r:>3}  mse = {m:.6e}  bic = {b:.4}");
    }
    if let Some(out) = &a.out {
        fs::write(out, w.with_rank(t.r)?.to_json()? + "\n")?;
    }
    emit(None, &(serde_json::to_string(&t)? + "\n"))
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let model = ModelKind::parse(&a.model)
        .ok_or_else(|| Error::Contract(format!("unknown model '{}' (expected KNN, laGP, vecc or sGP)", a.model)))?;
    let train = ingest_csv(&a.train, &a.response)?;
    let test = read_test(&a.test, &a.response, &train.columns)?;
    let scaler = MinMaxScaler::fit(train.x.as_ref())?;
    let mut x_train = scaler.transform(train.x.as_ref());
    let mut x_test = scaler.transform(test.0.as_ref());
    if let Some(path) = &a.warp {
        let w = read_warp(path)?;
        let r = a.r.unwrap_or(w.r);
        x_train = apply_warp(x_train.as_ref(), &w, r)?;
        x_test = apply_warp(x_test.as_ref(), &w, r)?;
    } else if a.r.is_some() {
        return Err(Error::Contract("--r needs --warp".into()));
    }
    let local = a.local.config(a.seed);
    let y = &train.y;
    let pred: PredictiveDist = match model {
        ModelKind::Knn => {
            let mean = knn_predict_batch(x_train.as_ref(), y, x_test.as_ref(), local.k.min(y.len()))?;
            PredictiveDist { variance: vec![f64::NAN; mean.len()], mean }
        }
        ModelKind::LocalGp => {
            let spec0 = default_local_spec(x_train.as_ref(), y)?;
            local_gp_predict_batch(x_train.as_ref(), y, x_test.as_ref(), &local, &spec0)?
        }
        ModelKind::Vecchia => {
            let spec0 = default_local_spec(x_train.as_ref(), y)?;
            let local = LocalConfig { cond_size: local.cond_size.min(y.len().saturating_sub(1)).max(1), ..local };
            vecchia_predict_batch(&vecchia_fit(x_train.as_ref(), y, &local, &spec0)?, x_test.as_ref())?
        }
        ModelKind::SubsetGp => {
            let n = y.len();
            let size = a.bag_size.min(n);
            let mut idx = rand_subset(n, size, a.seed);
            idx.sort_unstable();
            let xs = prewarp::linalg::select_rows(x_train.as_ref(), &idx);
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            fit_gp(xs.as_ref(), &ys, &FitConfig::default().with_seed(a.seed))?.predict(x_test.as_ref(), true)?
        }
    };
    let mut text = String::new();
    for (m, v) in pred.mean.iter().zip(&pred.variance) {
        let row = if v.is_nan() { serde_json::json!({ "mean": m }) } else { serde_json::json!({ "mean": m, "variance": v }) };
        text.push_str(&row.to_string());
        text.push('\n');
    }
    if let Some(y_test) = &test.1 {
        eprintln!("mse = {:.6e}", mse(&pred.mean, y_test)?);
        if model != ModelKind::Knn {
            eprintln!("neg score = {:.6}", neg_log_score(&pred, y_test)?);
        }
    }
    emit(a.out.as_deref(), &text)
}

fn rand_subset(n: usize, size: usize, seed_value: u64) -> Vec<usize> {
    prewarp::sensitivity::bag_indices(n, &SubbagConfig { n_bags: 1, bag_size: size, seed: seed_value }, 0).unwrap_or_default()
}

/// Test inputs in the training column order; the response is optional.
fn read_test(path: &Path, response: &str, columns: &[String]) -> Result<(Mat<f64>, Option<Vec<f64>>), Error> {
    let (d, has_response) = ingest_csv_inputs(path, response)?;
    if d.columns != columns {
        return Err(Error::Data(format!("test columns {:?} differ from training columns {:?}", d.columns, columns)));
    }
    Ok((d.x, has_response.then_some(d.y)))
}

fn run(a: RunArgs) -> Result<(), Error> {
    let mut config = ExperimentConfig::new(data_source(&a.source)?, a.n_test, parse_methods(&a.methods)?);
    config.subbag = SubbagConfig { n_bags: a.bag.bags, bag_size: a.bag.bag_size, seed: seed::derive_label(a.seed, "bags") };
    config.n_mc = a.bag.mc;
    config.fit = FitConfig::default().with_seed(seed::derive_label(a.seed, "fit"));
    config.local = a.local.config(0);
    config.truncation = TruncationConfig { mind: a.mind, maxd: a.maxd, k: a.trunc_k };
    config.reps = a.reps;
    config.seed = a.seed;
    config.redraw_design = !a.no_redraw;
    config.timings = a.timings;
    let result = run_experiment(&config)?;
    let summary = result.summary();
    print_summary(&result.reports, &summary.labels);
    let lines = result.reports_jsonl()?;
    match &a.out {
        Some(out) => {
            fs::write(out, &lines)?;
            fs::write(sibling(out, "summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            fs::write(sibling(out, "warps.json"), serde_json::to_string_pretty(&result.warps)? + "\n")?;
        }
        None => {
            eprintln!("config: {}", serde_json::to_string(&summary.config)?);
            emit(None, &lines)?
        }
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn print_summary(reports: &[MetricsReport], labels: &[prewarp::pipeline::LabelSummary]) {
    eprintln!("{:<12} {:>14} {:>14} {:>5} {:>7}", "method", "median mse", "median -score", "ok", "failed");
    for l in labels {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"));
        eprintln!("{:<12} {:>14} {:>14} {:>5} {:>7}", l.label, f(l.median_mse), f(l.median_neg_score), l.n_ok, l.n_failed);
    }
    for r in reports.iter().filter(|r| r.error.is_some()) {
        eprintln!("rep {} {}: {}", r.rep, r.label, r.error.as_deref().unwrap_or_default());
    }
}

fn inspect(a: InspectArgs) -> Result<(), Error> {
    let text = fs::read_to_string(&a.file)?;
    if let Ok(w) = WarpTransform::from_json(&text) {
        print_spectrum(&w);
        for i in 0..w.dim() {
            let row: Vec<String> = (0..w.dim()).map(|j| format!("{:>11.4e}", w.l[(i, j)])).collect();
            eprintln!("  L[{}] {}", i + 1, row.join(" "));
        }
        return emit(None, &(w.to_json()? + "\n"));
    }
    let mut reports = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: MetricsReport = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{}: line {} is neither a warp nor a report: {e}", a.file.display(), i + 1)))?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(Error::Data(format!("{}: no warp or reports found", a.file.display())));
    }
    let mut order: Vec<String> = Vec::new();
    for r in &reports {
        if !order.contains(&r.label) {
            order.push(r.label.clone());
        }
    }
    let labels: Vec<prewarp::pipeline::LabelSummary> = order
        .into_iter()
        .map(|label| {
            let rows: Vec<&MetricsReport> = reports.iter().filter(|r| r.label == label).collect();
            let mut m: Vec<f64> = rows.iter().filter_map(|r| r.mse).collect();
            let mut s: Vec<f64> = rows.iter().filter_map(|r| r.neg_score).collect();
            prewarp::pipeline::LabelSummary {
                n_ok: m.len(),
                n_failed: rows.len() - m.len(),
                median_mse: median(&mut m),
                median_neg_score: median(&mut s),
                label,
            }
        })
        .collect();
    print_summary(&reports, &labels);
    emit(None, &(serde_json::to_string_pretty(&labels)? + "\n"))
}
