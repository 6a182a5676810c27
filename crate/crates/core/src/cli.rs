//! The `shapefit` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::backfit::{fit, AdditiveFit, Dataset, FitConfig};
use crate::component::{ShapeMode, ShapeSpec};
use crate::datagen::{self, Scenario, SimConfig};
use crate::error::{Error, Result};
use crate::eval::{
    self, grid_select, kfold_cv, metrics, support_of, with_thread_cap, GridSpec, LambdaGrid, MeanSe, Method,
    ProtocolConfig, StudyConfig, StudySummary, SUPPORT_EPS,
};
use crate::io::{self, ModelFile, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "shapefit",
    version,
    about = "Sparse shape-constrained additive regression",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to a CSV file and save it.
    Fit(FitArgs),
    /// Predict from a saved model.
    Predict(PredictArgs),
    /// Write simulated train/validation/test CSVs.
    Simulate(SimulateArgs),
    /// Replicated evaluation of one or more methods.
    Eval(EvalArgs),
    /// K-fold cross-validation over the penalty grid, then refit.
    Cv(CvArgs),
    /// Tabulate fitted component functions for plotting.
    ExportComponents(ExportArgs),
}

/// Penalty and solver flags shared by the fitting commands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Shape family: dc, convex, convex-inc, isotonic, liso, tv, ac or none.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long = "lambda-d", allow_negative_numbers = true)]
    pub lambda_d: Option<f64>,
    #[arg(long = "lambda-t", allow_negative_numbers = true)]
    pub lambda_t: Option<f64>,
    #[arg(long = "lambda-s", allow_negative_numbers = true)]
    pub lambda_s: Option<f64>,
    /// Select penalties on a grid: `default` or `NSxNSHAPE` (e.g. `30x5`).
    #[arg(long, num_args = 0..=1, default_missing_value = "default")]
    pub grid: Option<String>,
    /// Relative objective change that ends the outer loop.
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    #[arg(long = "max-sweeps")]
    pub max_sweeps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Response column name (default `y`).
    #[arg(long)]
    pub response: Option<String>,
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Validation CSV, required with --grid.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Model file to write (`-` for standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: u8,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    #[arg(long, default_value_t = 5.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Output prefix; writes PREFIX_train.csv, PREFIX_validation.csv,
    /// PREFIX_test.csv and PREFIX_meta.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Simulation scenario (1, 2 or 3). Alternative to a data triplet.
    #[arg(long, conflicts_with_all = ["train", "validation", "test"])]
    pub scenario: Option<u8>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub p: usize,
    #[arg(long, default_value_t = 5.0)]
    pub snr: f64,
    #[arg(long, default_value_t = 20)]
    pub replicates: usize,
    #[arg(long, requires_all = ["validation", "test"])]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// True support for a data triplet: comma-separated column names, or
    /// the metadata file written by `simulate`.
    #[arg(long)]
    pub support: Option<String>,
    /// Comma-separated methods.
    #[arg(long, default_value = "dc,tv")]
    pub methods: String,
    /// Per-replicate rows (JSON lines) in addition to the summary.
    #[arg(long)]
    pub replicates_out: Option<PathBuf>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Run the real-data protocol: rescale covariates to [0, 1], append
    /// Uniform(0, 1) spurious columns up to --p-total, select by K-fold CV
    /// and refit, over --partitions random partitions.
    #[arg(long)]
    pub protocol: bool,
    #[arg(long = "p-total", default_value_t = 50)]
    pub p_total: usize,
    #[arg(long, default_value_t = 20)]
    pub partitions: usize,
    /// Model file (plain CV) or protocol report (JSON) to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Evenly spaced points per component over its knot range.
    #[arg(long = "grid-points", alias = "points", default_value_t = 101)]
    pub grid_points: usize,
    /// Export at the knots instead of an even grid.
    #[arg(long)]
    pub knots: bool,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
}

/// Parses arguments and runs the command. Messages meant for the terminal
/// go to standard error; data goes to files or standard output.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))?;
    execute(cli)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Cv(a) => cmd_cv(a),
        Command::ExportComponents(a) => cmd_export(a),
    }
}

/// Flags merged over the optional config file.
struct Resolved {
    method: Method,
    spec: ShapeSpec,
    fit: FitConfig,
    grid: Option<GridSpec>,
    /// Grid for commands that always search: `--grid`, else the config's.
    search: GridSpec,
    seed: u64,
    response: String,
    file: RunConfig,
}

fn resolve(m: &ModelArgs) -> Result<Resolved> {
    let file = match &m.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mode = m.mode.clone().or_else(|| file.mode.clone()).unwrap_or_else(|| "dc".into());
    let method = Method::parse(&mode)?;
    let pick = |flag: Option<f64>, cfg: Option<f64>, name: &str| -> Result<f64> {
        let v = flag.or(cfg).unwrap_or(0.0);
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Config(format!("--{name} must be finite and >= 0, got {v}")))
        }
    };
    let mut spec = ShapeSpec {
        mode: method.base.mode,
        lambda_d: pick(m.lambda_d, file.lambda_d, "lambda-d")?,
        lambda_t: pick(m.lambda_t, file.lambda_t, "lambda-t")?,
        lambda_s: pick(m.lambda_s, file.lambda_s, "lambda-s")?,
    };
    if mode == "liso" && spec.lambda_t == 0.0 && m.grid.is_none() {
        return Err(Error::Config("liso needs --lambda-t > 0 (or --grid)".into()));
    }
    if method.base.mode == ShapeMode::Isotonic && mode != "liso" {
        spec.lambda_t = 0.0;
    }
    let mut fit = file.apply(FitConfig::new(spec));
    if let Some(t) = m.tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("--tol must be positive, got {t}")));
        }
        fit.outer_tol = t;
    }
    if let Some(s) = m.max_sweeps {
        if s == 0 {
            return Err(Error::Config("--max-sweeps must be at least 1".into()));
        }
        fit.max_sweeps = s;
    }
    let grid = match m.grid.as_deref() {
        Some(text) => Some(parse_grid(text, file.grid_spec.clone().unwrap_or_default())?),
        None if file.grid == Some(true) => Some(file.grid_spec.clone().unwrap_or_default()),
        None => None,
    };
    let search = match &grid {
        Some(g) => g.clone(),
        None => file.grid_spec.clone().unwrap_or_default(),
    };
    Ok(Resolved {
        method,
        spec,
        fit,
        grid,
        search,
        seed: m.seed.or(file.seed).unwrap_or(0),
        response: m.response.clone().or_else(|| file.response.clone()).unwrap_or_else(|| "y".into()),
        file,
    })
}

fn parse_grid(text: &str, base: GridSpec) -> Result<GridSpec> {
    if text == "default" {
        base.validate()?;
        return Ok(base);
    }
    let bad = || Error::Config(format!("--grid expects 'default' or NSxNSHAPE, got '{text}'"));
    let (a, b) = text.split_once('x').ok_or_else(bad)?;
    let spec = GridSpec {
        n_lambda_s: a.trim().parse().map_err(|_| bad())?,
        n_lambda_shape: b.trim().parse().map_err(|_| bad())?,
        ..base
    };
    spec.validate()?;
    Ok(spec)
}

fn required(path: Option<PathBuf>, from_file: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    path.or_else(|| from_file.clone())
        .ok_or_else(|| Error::Config(format!("missing --{flag}")))
}

/// Applies name-keyed overrides from the config file.
fn with_overrides(mut config: FitConfig, names: &[String], file: &RunConfig) -> Result<FitConfig> {
    for (name, spec) in &file.overrides {
        let j = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Config(format!("override for unknown column '{name}'")))?;
        config.overrides.insert(j, *spec);
    }
    Ok(config)
}

fn load_dataset(path: &Path, response: &str) -> Result<Dataset> {
    io::read_table_file(path)?.into_dataset(response)
}

fn summary_line(fit: &AdditiveFit, spec: &ShapeSpec) -> String {
    format!(
        "active={} objective={} sweeps={} converged={} lambda_d={} lambda_t={} lambda_s={}",
        fit.active_set().len(),
        num(fit.objective()),
        fit.sweeps(),
        fit.converged(),
        num(spec.lambda_d),
        num(spec.lambda_t),
        num(spec.lambda_s),
    )
}

fn save_model(model: &ModelFile, out: &Path, summary: &str) -> Result<()> {
    model.save(out)?;
    if out == Path::new("-") {
        eprintln!("{summary}");
    } else {
        println!("{summary}");
    }
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let r = resolve(&a.model)?;
    let data_path = required(a.data, &r.file.data, "data")?;
    let out = required(a.out, &r.file.out, "out")?;
    let train = load_dataset(&data_path, &r.response)?;
    let config = with_overrides(r.fit.clone(), train.names(), &r.file)?;
    let (fit, spec) = match &r.grid {
        None => (fit(&train, &config)?, r.spec),
        Some(gs) => {
            let val_path = required(a.validation, &r.file.validation, "validation")?;
            let val = load_dataset(&val_path, &r.response)?;
            check_same_columns(&train, &val)?;
            let sel = with_thread_cap(|| -> Result<_> {
                let grid = LambdaGrid::default_for(&train, &r.method.base, &config, gs)?;
                grid_select(&train, &val, &grid, &r.method.base, &config)
            })??;
            if sel.all_nonconverged {
                eprintln!("warning: no grid point converged; using the best available fit");
            }
            (sel.fit, sel.spec)
        }
    };
    let model = ModelFile::from_fit(&fit, train.names(), &r.response, &spec)?;
    save_model(&model, &out, &summary_line(&fit, &spec))
}

fn check_same_columns(a: &Dataset, b: &Dataset) -> Result<()> {
    if a.names() != b.names() {
        return Err(Error::invalid("training and validation files have different columns"));
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let table = io::read_table_file(&a.data)?;
    let names = model.names();
    let columns = table.select(&names)?;
    let fit = model.to_fit();
    let pred = fit.predict(&columns)?;
    let mut buf = Vec::new();
    io::write_table(&mut buf, &["prediction".to_string()], &[pred.values])?;
    io::write_output(&a.out, &buf)?;
    let clamped: Vec<String> = names
        .iter()
        .zip(&pred.out_of_range)
        .filter(|(_, &c)| c > 0)
        .map(|(n, c)| format!("{n}={c}"))
        .collect();
    if !clamped.is_empty() {
        eprintln!("warning: out-of-range queries clamped: {}", clamped.join(" "));
    }
    Ok(())
}

#[derive(Serialize)]
struct SimulationMeta {
    scenario: datagen::ScenarioDescriptor,
    n: usize,
    p: usize,
    snr: f64,
    seed: u64,
    sigma: f64,
    signal_sd: f64,
    response: String,
    support: Vec<String>,
    files: [String; 3],
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let scenario = Scenario::builtin(a.scenario)?;
    let cfg = SimConfig {
        n: a.n,
        p: a.p,
        snr: a.snr,
        seed: a.seed,
    };
    let splits = datagen::generate_splits(&scenario, &cfg)?;
    let prefix = a.out.to_string_lossy().into_owned();
    let files = ["train", "validation", "test"].map(|s| format!("{prefix}_{s}.csv"));
    for (sim, file) in splits.iter().zip(&files) {
        let mut buf = Vec::new();
        io::write_dataset(&mut buf, &sim.data, &a.response)?;
        io::write_output(Path::new(file), &buf)?;
    }
    let names = splits[0].data.names();
    let meta = SimulationMeta {
        scenario: scenario.clone().into(),
        n: a.n,
        p: a.p,
        snr: a.snr,
        seed: a.seed,
        sigma: splits[0].sigma,
        signal_sd: scenario.signal_sd(),
        response: a.response.clone(),
        support: splits[0].support.iter().map(|&j| names[j].clone()).collect(),
        files: files.clone().map(|f| {
            Path::new(&f)
                .file_name()
                .map_or(f.clone(), |n| n.to_string_lossy().into_owned())
        }),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    io::write_output(Path::new(&format!("{prefix}_meta.json")), text.as_bytes())?;
    println!("wrote {} {} {} ({} rows, {} covariates)", files[0], files[1], files[2], a.n, a.p);
    Ok(())
}

const EVAL_HEADER: [&str; 13] = [
    "method",
    "replicates",
    "precision_mean",
    "precision_se",
    "recall_mean",
    "recall_se",
    "model_size_mean",
    "model_size_se",
    "test_mse_mean",
    "test_mse_se",
    "precision_count",
    "recall_count",
    "nonconverged",
];

fn eval_csv(summaries: &[StudySummary], nonconverged: &[usize]) -> Result<Vec<u8>> {
    let cell = |v: f64| if v.is_finite() { num(v) } else { String::new() };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EVAL_HEADER)?;
    for (s, nc) in summaries.iter().zip(nonconverged) {
        w.write_record([
            s.method.clone(),
            s.replicates.to_string(),
            cell(s.precision.mean),
            cell(s.precision.se),
            cell(s.recall.mean),
            cell(s.recall.se),
            cell(s.model_size.mean),
            cell(s.model_size.se),
            cell(s.test_mse.mean),
            cell(s.test_mse.se),
            s.precision.count.to_string(),
            s.recall.count.to_string(),
            nc.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Method::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::Config("--methods is empty".into()));
    }
    Ok(methods)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let r = resolve(&a.model)?;
    let methods = parse_methods(&a.methods)?;
    let grid = r.search.clone();
    let (results, summaries) = match (a.scenario, &a.train) {
        (Some(id), _) => {
            let cfg = StudyConfig {
                scenario: Scenario::builtin(id)?,
                n: a.n,
                p: a.p,
                snr: a.snr,
                replicates: a.replicates,
                seed: r.seed,
                methods: methods.clone(),
                fit: r.fit.clone(),
                grid,
            };
            with_thread_cap(|| eval::run_study(&cfg))??
        }
        (None, Some(train)) => {
            let load = |p: &Option<PathBuf>, flag: &str| -> Result<Dataset> {
                load_dataset(&required(p.clone(), &None, flag)?, &r.response)
            };
            let train = load_dataset(train, &r.response)?;
            let val = load(&a.validation, "validation")?;
            let test = load(&a.test, "test")?;
            check_same_columns(&train, &val)?;
            check_same_columns(&train, &test)?;
            let truth = match &a.support {
                Some(s) => Some(parse_support(s, train.names())?),
                None => None,
            };
            let results = with_thread_cap(|| -> Result<Vec<eval::ReplicateResult>> {
                methods
                    .iter()
                    .map(|m| {
                        let g = LambdaGrid::default_for(&train, &m.base, &r.fit, &grid)?;
                        let sel = grid_select(&train, &val, &g, &m.base, &r.fit)?;
                        let mut report = metrics(&sel.fit, truth.as_deref().unwrap_or(&[]), &test)?;
                        if truth.is_none() {
                            report.precision = None;
                            report.recall = f64::NAN;
                        }
                        Ok(eval::ReplicateResult {
                            replicate: 0,
                            method: m.name.clone(),
                            spec: sel.spec,
                            metrics: report,
                            all_nonconverged: sel.all_nonconverged,
                        })
                    })
                    .collect()
            })??;
            let summaries = eval::summarize(&results, &methods);
            (results, summaries)
        }
        (None, None) => return Err(Error::Config("eval needs --scenario or --train/--validation/--test".into())),
    };
    let nonconverged: Vec<usize> = methods
        .iter()
        .map(|m| results.iter().filter(|x| x.method == m.name && x.all_nonconverged).count())
        .collect();
    io::write_output(&a.out, &eval_csv(&summaries, &nonconverged)?)?;
    if let Some(path) = &a.replicates_out {
        let mut text = String::new();
        for row in &results {
            let _ = writeln!(text, "{}", serde_json::to_string(row)?);
        }
        io::write_output(path, text.as_bytes())?;
    }
    Ok(())
}

/// Column names (comma-separated) or a `simulate` metadata file.
fn parse_support(spec: &str, names: &[String]) -> Result<Vec<usize>> {
    let listed: Vec<String> = if spec.ends_with(".json") {
        let text = std::fs::read_to_string(spec)?;
        let meta: serde_json::Value = serde_json::from_str(&text)?;
        meta.get("support")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Config(format!("{spec}: no 'support' array")))?
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| Error::Config("support entries must be strings".into())))
            .collect::<Result<_>>()?
    } else {
        spec.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
    };
    let mut idx: Vec<usize> = listed
        .iter()
        .map(|n| {
            names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::Config(format!("support column '{n}' not in data")))
        })
        .collect::<Result<_>>()?;
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

#[derive(Serialize)]
struct ProtocolReport<'a> {
    method: &'a str,
    p_original: usize,
    p_total: usize,
    folds: usize,
    partitions: usize,
    seed: u64,
    elimination_rate: f64,
    model_size: MeanSe,
    runs: Vec<ProtocolRow>,
}

#[derive(Serialize)]
struct ProtocolRow {
    partition: usize,
    lambda_shape: f64,
    lambda_s: f64,
    selected: Vec<String>,
    spurious_selected: usize,
}

fn cmd_cv(a: CvArgs) -> Result<()> {
    let r = resolve(&a.model)?;
    let data_path = required(a.data, &r.file.data, "data")?;
    let out = required(a.out, &r.file.out, "out")?;
    let data = load_dataset(&data_path, &r.response)?;
    let grid_spec = r.search.clone();
    let config = with_overrides(r.fit.clone(), data.names(), &r.file)?;
    if a.protocol {
        if !config.overrides.is_empty() {
            return Err(Error::Config("column overrides are not supported with --protocol".into()));
        }
        let protocol = ProtocolConfig {
            p_total: a.p_total,
            folds: a.folds,
            partitions: a.partitions,
            seed: r.seed,
            grid: grid_spec,
        };
        let result = with_thread_cap(|| eval::real_data_protocol(&data, &r.method.base, &config, &protocol))??;
        let mut names = data.names().to_vec();
        names.extend((0..a.p_total.saturating_sub(data.p())).map(|k| format!("spurious{}", k + 1)));
        let report = ProtocolReport {
            method: &r.method.name,
            p_original: data.p(),
            p_total: a.p_total,
            folds: a.folds,
            partitions: a.partitions,
            seed: r.seed,
            elimination_rate: result.elimination_rate,
            model_size: result.model_size,
            runs: result
                .runs
                .iter()
                .map(|run| ProtocolRow {
                    partition: run.partition,
                    lambda_shape: run.spec.shape_lambda(),
                    lambda_s: run.spec.lambda_s,
                    selected: run.support.iter().map(|&j| names[j].clone()).collect(),
                    spurious_selected: run.support.iter().filter(|j| run.spurious.contains(j)).count(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        io::write_output(&out, text.as_bytes())?;
        let line = format!(
            "elimination_rate={} mean_model_size={} partitions={}",
            num(result.elimination_rate),
            num(result.model_size.mean),
            a.partitions
        );
        if out == Path::new("-") {
            eprintln!("{line}");
        } else {
            println!("{line}");
        }
        return Ok(());
    }
    let cv = with_thread_cap(|| -> Result<_> {
        let grid = LambdaGrid::default_for(&data, &r.method.base, &config, &grid_spec)?;
        kfold_cv(&data, a.folds, &grid, &r.method.base, &config, r.seed)
    })??;
    let model = ModelFile::from_fit(&cv.fit, data.names(), &r.response, &cv.spec)?;
    let summary = format!(
        "{} support={}",
        summary_line(&cv.fit, &cv.spec),
        support_of(&cv.fit, SUPPORT_EPS).len()
    );
    save_model(&model, &out, &summary)
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    if !a.knots && a.grid_points < 2 {
        return Err(Error::Config("--grid-points must be at least 2".into()));
    }
    let fit = model.to_fit();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["component", "x", "f"])?;
    for (rec, comp) in model.components.iter().zip(fit.components()) {
        let xs: Vec<f64> = if a.knots || comp.knots.len() < 2 {
            comp.knots.clone()
        } else {
            let (lo, hi) = (comp.knots[0], comp.knots[comp.knots.len() - 1]);
            let last = a.grid_points - 1;
            (0..a.grid_points)
                .map(|i| if i == last { hi } else { lo + (hi - lo) * i as f64 / last as f64 })
                .collect()
        };
        for x in xs {
            let (f, _) = comp.eval(x);
            w.write_record([rec.column.clone(), num(x), num(f)])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    io::write_output(&a.out, &bytes)
}

/// Entry point for the binary: runs and maps failures to a one-line
/// `error[kind]: message` on standard error with a nonzero exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.kind());
            1
        }
    }
}

/// Shortest text that parses back to the same value.
fn num(v: f64) -> String {
    v.to_string()
}
