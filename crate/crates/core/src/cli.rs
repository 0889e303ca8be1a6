//! Command-line front end.
//!
//! Primary results go to stdout (JSON, or CSV for tables) and logs to stderr.
//! With `--out <dir>` the results are also written as files together with a
//! `manifest.json`. Exit codes: 0 success, 1 usage or input error, 2
//! numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::boot::{
    bootstrap_ci, pivot_quantiles, run_perturbation_bootstrap, run_residual_bootstrap, run_wild_bootstrap,
    BootError, BootOptions, Engine, PivotKind,
};
use crate::diagnostics::{self, design_diagnostics, psi_moments_from_sample, thm42c_condition, DiagError};
use crate::edgeworth::{
    location_model_coefficients, location_original_coefficients, simple_regression_b11, tabulate, Edgeworth1D,
    EdgeworthError, LocationExpansion,
};
use crate::io::{self, IoError, RunManifest};
use crate::mest::{m_estimate, MestError, RegressionData, SolverOptions};
use crate::perturb::{WeightError, WeightScheme};
use crate::score::{ScoreError, ScoreFunction};
use crate::sim::{self, SimError};

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "PERTBOOT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Input(#[from] IoError),

    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<MestError> for CliError {
    fn from(e: MestError) -> Self {
        match e {
            MestError::Data(d) => CliError::Usage(d.to_string()),
            MestError::InvalidParameter(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BootError> for CliError {
    fn from(e: BootError) -> Self {
        match e {
            BootError::Mest(m) => m.into(),
            BootError::InvalidParameter(m) => CliError::Usage(m),
            e @ (BootError::UnsupportedScore { .. } | BootError::Weights(_)) => CliError::Usage(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<WeightError> for CliError {
    fn from(e: WeightError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EdgeworthError> for CliError {
    fn from(e: EdgeworthError) -> Self {
        match e {
            EdgeworthError::UnsupportedModel(m) | EdgeworthError::InvalidParameter(m) => CliError::Usage(m),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::InvalidParameter(m) => CliError::Usage(m),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidScenario(m) | SimError::Design(m) => CliError::Usage(m),
            SimError::Data(d) => CliError::Usage(d.to_string()),
            SimError::Score(s) => s.into(),
            SimError::Weights(w) => w.into(),
            SimError::Mest(m) => m.into(),
            SimError::Boot(b) => b.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pertboot", version, about = "Perturbation bootstrap for regression M-estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit an M-estimator and print a JSON summary.
    Fit(FitArgs),
    /// Bootstrap a pivot and print confidence intervals as JSON.
    Bootstrap(BootstrapArgs),
    /// Run a Monte Carlo scenario from a config file.
    Simulate(SimulateArgs),
    /// Tabulate a one-dimensional Edgeworth expansion as CSV.
    Edgeworth(EdgeworthArgs),
    /// Report design diagnostics and the skewness gap as JSON.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Headed numeric CSV file.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column; all other columns are covariates.
    #[arg(long, default_value = "y")]
    response: String,
    /// Prepend a column of ones.
    #[arg(long)]
    intercept: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScoreName {
    Ls,
    PseudoHuber,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long, value_enum, default_value = "ls")]
    score: ScoreName,
    /// Tuning constant of the pseudo-Huber score.
    #[arg(long, default_value_t = 1.345)]
    tuning: f64,
}

impl ScoreArgs {
    fn build(&self) -> Result<ScoreFunction, ScoreError> {
        let name = match self.score {
            ScoreName::Ls => "ls",
            ScoreName::PseudoHuber => "pseudo-huber",
        };
        ScoreFunction::from_name(name, self.tuning)
    }
}

#[derive(Debug, Args)]
struct SeedArgs {
    /// Master seed; required unless --entropy is given.
    #[arg(long)]
    seed: Option<u64>,
    /// Draw the seed from the OS (it is recorded in the output).
    #[arg(long, conflicts_with = "seed")]
    entropy: bool,
}

impl SeedArgs {
    fn resolve(&self) -> Result<u64, CliError> {
        match (self.seed, self.entropy) {
            (Some(s), _) => Ok(s),
            (None, true) => Ok(rand::random()),
            (None, false) => Err(CliError::Usage(
                "a --seed is required for randomized commands (or pass --entropy)".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
struct OutArgs {
    /// Directory for output files and the run manifest.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum WeightName {
    BetaHalf,
    ScaledBetaHalf,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    #[command(flatten)]
    seed: SeedArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Pivot: f, h, htilde or hbreve.
    #[arg(long, default_value = "htilde")]
    pivot: String,
    /// Engine: perturb, residual or wild.
    #[arg(long, default_value = "perturb")]
    engine: String,
    /// Number of bootstrap replicates.
    #[arg(long = "B", default_value_t = 2000)]
    b: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, value_enum, default_value = "scaled-beta-half")]
    weights: WeightName,
    /// Scale c of c·Beta(1/2,3/2); the default gives unit-mean weights.
    #[arg(long, default_value_t = 4.0)]
    weight_scale: f64,
    /// Write the B×p pivot matrix to this CSV file.
    #[arg(long)]
    dump_pivots: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario config (TOML sections: design, errors, score, weights, sweep).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long, conflicts_with = "entropy")]
    seed: Option<u64>,
    /// Replace the scenario seed with one drawn from the OS.
    #[arg(long)]
    entropy: bool,
    /// Run the rate sweep over the config's [sweep] n_grid.
    #[arg(long)]
    sweep: bool,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelName {
    /// Location model; coefficients from --sigma and --third-moment, or
    /// from the naive bootstrap of a fitted data set with --naive.
    Location,
    /// Simple regression with intercept: b11 for --coord from --gamma1.
    SimpleRegression,
    /// Coefficients given directly with --b11 and --b31.
    Generic,
}

#[derive(Debug, Args)]
struct EdgeworthArgs {
    #[arg(long, value_enum)]
    model: ModelName,
    /// Sample size (taken from the data when --data is given).
    #[arg(long)]
    n: Option<f64>,
    /// Error standard deviation.
    #[arg(long)]
    sigma: Option<f64>,
    /// Third central moment of the errors.
    #[arg(long)]
    third_moment: Option<f64>,
    /// Use the naive-bootstrap coefficients of the fitted location model.
    #[arg(long)]
    naive: bool,
    /// Error skewness for the simple regression model.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Coordinate (1 = intercept, 2 = slope).
    #[arg(long, default_value_t = 1)]
    coord: usize,
    #[arg(long)]
    b11: Option<f64>,
    #[arg(long)]
    b31: Option<f64>,
    /// Optional data set (location --naive and simple-regression).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    intercept: bool,
    #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
    from: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    to: f64,
    #[arg(long, default_value_t = 0.1)]
    step: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    score: ScoreArgs,
    /// Exponent α in (0, 1/2].
    #[arg(long, default_value_t = diagnostics::DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    out: OutArgs,
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&t| t > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

/// Collects outputs for `--out` and writes the manifest last.
struct Sink<'a> {
    dir: Option<&'a Path>,
    manifest: RunManifest,
}

impl<'a> Sink<'a> {
    fn new(out: &'a OutArgs, argv: &[String], hashed: &[u8], seed: u64, threads: Option<usize>) -> Result<Self, CliError> {
        if let Some(d) = &out.out {
            fs::create_dir_all(d).map_err(|source| IoError::Io { path: d.clone(), source })?;
        }
        Ok(Self { dir: out.out.as_deref(), manifest: RunManifest::new(argv.join(" "), hashed, seed, threads) })
    }

    fn path(&mut self, name: &str) -> Option<PathBuf> {
        self.dir.map(|d| {
            self.manifest.outputs.push(name.to_string());
            d.join(name)
        })
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        if let Some(p) = self.path(name) {
            io::write_json(&p, value)?;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some(d) = self.dir {
            io::write_json(&d.join("manifest.json"), &self.manifest)?;
        }
        Ok(())
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).map_err(IoError::from)?;
    writeln!(out, "{s}").map_err(|source| IoError::Io { path: "<stdout>".into(), source })?;
    Ok(())
}

fn fit_cmd(a: &FitArgs, argv: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let data = io::load_csv(&a.data.data, &a.data.response, a.data.intercept)?;
    let score = a.score.build()?;
    let fit = m_estimate(&data, &score, &SolverOptions::default())?;
    let summary = fit.summary();
    let mut sink = Sink::new(&a.out, argv, argv.join(" ").as_bytes(), 0, None)?;
    sink.json("fit.json", &summary)?;
    sink.finish()?;
    print_json(out, &summary)
}

fn bootstrap_cmd(a: &BootstrapArgs, argv: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let kind = PivotKind::parse(&a.pivot)?;
    let engine = Engine::parse(&a.engine)?;
    match (engine, kind) {
        (Engine::Perturb, _) | (Engine::Residual, PivotKind::H) | (Engine::Wild, PivotKind::Hbreve) => {}
        (Engine::Residual, _) => return Err(CliError::Usage("the residual engine produces the h pivot only".into())),
        (Engine::Wild, _) => return Err(CliError::Usage("the wild engine produces the hbreve pivot only".into())),
    }
    let seed = a.seed.resolve()?;
    let threads = threads_from_env()?;
    let data = io::load_csv(&a.data.data, &a.data.response, a.data.intercept)?;
    let score = a.score.build()?;
    let fit = m_estimate(&data, &score, &SolverOptions::default())?;
    let opts = BootOptions { threads, ..Default::default() };
    let sample = match engine {
        Engine::Perturb => {
            let scheme = match a.weights {
                WeightName::BetaHalf => WeightScheme::from_name("beta-half", 1.0)?,
                WeightName::ScaledBetaHalf => WeightScheme::from_name("scaled-beta-half", a.weight_scale)?,
            };
            run_perturbation_bootstrap(&data, &score, &fit, &scheme, kind, a.b, seed, &opts)?
        }
        Engine::Residual => run_residual_bootstrap(&data, &score, &fit, a.b, seed, &opts)?,
        Engine::Wild => run_wild_bootstrap(&data, &fit, a.b, seed, &opts)?,
    };
    let ci = bootstrap_ci(&sample, &fit, a.level)?;
    let alpha = 1.0 - a.level;
    let probs = [alpha / 2.0, 0.5, 1.0 - alpha / 2.0];
    let q = pivot_quantiles(&sample, &probs);
    let report = json!({
        "pivot": kind.as_str(),
        "engine": engine.as_str(),
        "b": a.b,
        "seed": seed,
        "fit": fit.summary(),
        "ci": ci,
        "pivot_quantiles": { "probs": probs, "by_coordinate": q },
        "rejection_rate": sample.rejection_rate(),
        "unreliable": sample.unreliable,
    });
    let mut sink = Sink::new(&a.out, argv, argv.join(" ").as_bytes(), seed, threads)?;
    let names: Vec<String> = (1..=data.p()).map(|j| format!("t{j}")).collect();
    if let Some(p) = &a.dump_pivots {
        io::write_matrix_csv(p, &names, &sample.pivots)?;
    }
    if let Some(p) = sink.path("pivots.csv") {
        io::write_matrix_csv(&p, &names, &sample.pivots)?;
    }
    sink.json("bootstrap.json", &report)?;
    sink.finish()?;
    print_json(out, &report)
}

fn simulate_cmd(a: &SimulateArgs, argv: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let (mut scenario, text) = io::load_scenario(&a.config)?;
    if let Some(s) = a.seed {
        scenario.seed = s;
    } else if a.entropy {
        scenario.seed = rand::random();
    }
    let threads = threads_from_env()?;
    let opts = BootOptions { threads, ..Default::default() };
    let mut sink = Sink::new(&a.out, argv, text.as_bytes(), scenario.seed, threads)?;
    if a.sweep {
        let grid = scenario
            .sweep
            .as_ref()
            .map(|s| s.n_grid.clone())
            .ok_or_else(|| CliError::Usage("--sweep needs a [sweep] section with n_grid".into()))?;
        let report = sim::rate_sweep(&scenario, &grid, &opts)?;
        let rows: Vec<_> = report.reports.iter().flat_map(|r| r.csv_rows()).collect();
        if let Some(p) = sink.path("sweep.csv") {
            io::write_rows(&p, &rows)?;
        }
        sink.json("sweep.json", &report)?;
        sink.finish()?;
        print_json(out, &report)
    } else {
        let report = sim::run_scenario(&scenario, &opts)?;
        if report.partial {
            log::warn!("partial report: {} dataset(s) failed", report.errors.len());
        }
        if let Some(p) = sink.path("simulation.csv") {
            io::write_rows(&p, &report.csv_rows())?;
        }
        sink.json("simulation.json", &report)?;
        sink.finish()?;
        print_json(out, &report)
    }
}

fn edgeworth_cmd(a: &EdgeworthArgs, argv: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| CliError::Usage(format!("--{flag} is required here")));
    let load = || -> Result<RegressionData, CliError> {
        let path = a.data.as_ref().ok_or_else(|| CliError::Usage("--data is required here".into()))?;
        Ok(io::load_csv(path, &a.response, a.intercept)?)
    };
    let e = match a.model {
        ModelName::Generic => Edgeworth1D::new(need(a.b11, "b11")?, need(a.b31, "b31")?, need(a.n, "n")?)?,
        ModelName::Location if a.naive => {
            let data = load()?;
            let fit = m_estimate(&data, &crate::score::make_least_squares(), &SolverOptions::default())?;
            location_model_coefficients(&fit, LocationExpansion::NaiveBootstrap)?
        }
        ModelName::Location => {
            location_original_coefficients(need(a.sigma, "sigma")?, need(a.third_moment, "third-moment")?, need(a.n, "n")?)?
        }
        ModelName::SimpleRegression => {
            let data = load()?;
            let fit = m_estimate(&data, &crate::score::make_least_squares(), &SolverOptions::default())?;
            let b11 = simple_regression_b11(&fit, need(a.gamma1, "gamma1")?, a.coord)?;
            if a.b31.is_none() {
                log::warn!("no closed form for b31 in this model; tabulating with --b31 0");
            }
            Edgeworth1D::new(b11, a.b31.unwrap_or(0.0), fit.n() as f64)?
        }
    };
    if !(a.step > 0.0) || !(a.to > a.from) {
        return Err(CliError::Usage("grid needs --to > --from and --step > 0".into()));
    }
    if let Some(w) = e.range_warning() {
        log::warn!("{w}");
    }
    let k = ((a.to - a.from) / a.step + 1e-9).floor() as usize;
    let grid: Vec<f64> = (0..=k).map(|i| a.from + i as f64 * a.step).collect();
    let table = tabulate(&e, &grid);
    let m = DMatrix::from_fn(table.len(), 3, |i, j| [table[i].0, table[i].1, table[i].2][j]);
    let names = ["x".to_string(), "density".to_string(), "cdf".to_string()];
    let mut sink = Sink::new(&a.out, argv, argv.join(" ").as_bytes(), 0, None)?;
    if let Some(p) = sink.path("edgeworth.csv") {
        io::write_matrix_csv(&p, &names, &m)?;
    }
    sink.json("coefficients.json", &e)?;
    sink.finish()?;
    let mut w = csv::Writer::from_writer(out);
    let to_io = |e: csv::Error| IoError::Csv { path: "<stdout>".into(), source: e };
    w.write_record(&names).map_err(to_io)?;
    for (x, d, c) in table {
        w.write_record([x.to_string(), d.to_string(), c.to_string()]).map_err(to_io)?;
    }
    w.flush().map_err(|source| IoError::Io { path: "<stdout>".into(), source })?;
    Ok(())
}

fn diagnose_cmd(a: &DiagnoseArgs, argv: &[String], out: &mut dyn Write) -> Result<(), CliError> {
    let data = io::load_csv(&a.data.data, &a.data.response, a.data.intercept)?;
    let d = design_diagnostics(data.x(), a.alpha)?;
    let score = a.score.build()?;
    let fit = m_estimate(&data, &score, &SolverOptions::default())?;
    let moments = psi_moments_from_sample(&score, &fit.residuals);
    let report = json!({
        "design": d,
        "psi_moments_from_residuals": moments,
        "skewness_gap_estimate": thm42c_condition(&moments),
    });
    let mut sink = Sink::new(&a.out, argv, argv.join(" ").as_bytes(), 0, None)?;
    sink.json("diagnostics.json", &report)?;
    sink.finish()?;
    print_json(out, &report)
}

/// Parse `argv` (including the program name), run the command and return the
/// exit code. Errors are reported on stderr.
pub fn dispatch(argv: &[String], out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let res = match &cli.command {
        Command::Fit(a) => fit_cmd(a, argv, out),
        Command::Bootstrap(a) => bootstrap_cmd(a, argv, out),
        Command::Simulate(a) => simulate_cmd(a, argv, out),
        Command::Edgeworth(a) => edgeworth_cmd(a, argv, out),
        Command::Diagnose(a) => diagnose_cmd(a, argv, out),
    };
    match res {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
