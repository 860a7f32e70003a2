//! Command-line surface: argument parsing, CSV ingestion and report emission.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::anchors::{ComponentEstimates, DEFAULT_C_T};
use crate::error::{Error, Result};
use crate::fit::{fit, BMethod, BandwidthMode, FitOptions, FitResult, MsdSummary, DEFAULT_Y1, DEFAULT_Y2};
use crate::kernels::KernelSpec;
use crate::lambda::{build_lambda, DegeneratePolicy, LambdaOptions, WeightSpec, DEFAULT_GRID_POINTS, DEFAULT_N_X};
use crate::msd::{DEFAULT_BETA, DEFAULT_TAU};
use crate::numeric::linspace;
use crate::simstudy::{design, mc_run, rep_rng, SimConfig, SimReport, DEFAULT_N, DEFAULT_REPS, DEFAULT_SEED};
use crate::smoothers::{Bandwidths, Dataset, SmootherState};
use crate::transform::tabulate;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HETTRANS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "hettrans", version, about = "Transformation estimation in heteroscedastic transformation models")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Estimate the transformation from a CSV file with header `y,x1,...,xd`.
    Fit {
        input: Option<PathBuf>,
        #[command(flatten)]
        est: EstimationArgs,
        #[arg(long = "b-method", value_enum, default_value_t = BMethodArg::Tilde)]
        b_method: BMethodArg,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
    },
    /// Monte Carlo study on the built-in simulation design.
    Simulate {
        #[command(flatten)]
        sample: SampleArgs,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        #[command(flatten)]
        est: EstimationArgs,
    },
    /// Tabulate λ̂ for a CSV file, or for one simulated sample when no file is given.
    EvalLambda {
        input: Option<PathBuf>,
        #[command(flatten)]
        sample: SampleArgs,
        #[command(flatten)]
        est: EstimationArgs,
    },
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, default_value_t = DEFAULT_N)]
    n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EstimationArgs {
    /// Response bandwidth; cross-validated when omitted.
    #[arg(long)]
    hy: Option<f64>,
    /// Regressor bandwidth; reference rule when omitted.
    #[arg(long)]
    hx: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_Y1)]
    y1: f64,
    #[arg(long, default_value_t = DEFAULT_Y2)]
    y2: f64,
    #[arg(long, default_value_t = DEFAULT_C_T)]
    ct: f64,
    #[arg(long, default_value_t = DEFAULT_N_X)]
    nx: usize,
    /// Rows of the emitted curve tables.
    #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
    grid: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BMethodArg {
    Tilde,
    Msd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    Fit,
    Simulate,
    EvalLambda,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub input_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub fit: FitOptions,
    pub sim: SimConfig,
    pub grid: usize,
}

fn bandwidth_mode(hy: Option<f64>, hx: Option<f64>) -> Result<BandwidthMode> {
    match (hy, hx) {
        (None, None) => Ok(BandwidthMode::Auto),
        (Some(h_y), Some(h_x)) => Bandwidths::new(h_y, h_x)
            .map(|_| BandwidthMode::Fixed { h_y, h_x })
            .map_err(|e| Error::Usage(format!("--hy/--hx: {e}"))),
        (None, Some(_)) => Err(Error::Usage("--hx requires --hy".into())),
        (Some(_), None) => Err(Error::Usage("--hy requires --hx".into())),
    }
}

fn to_config(cli: Cli) -> Result<RunConfig> {
    let (command, input_path, sample, reps, est, msd) = match cli.command {
        Sub::Fit { input, est, b_method, tau, beta } => (Command::Fit, input, None, None, est, Some((b_method, tau, beta))),
        Sub::Simulate { sample, reps, est } => (Command::Simulate, None, Some(sample), Some(reps), est, None),
        Sub::EvalLambda { input, sample, est } => (Command::EvalLambda, input, Some(sample), None, est, None),
    };
    if command == Command::Fit && input_path.is_none() {
        return Err(Error::Usage("fit requires an input CSV path".into()));
    }
    let bandwidths = bandwidth_mode(est.hy, est.hx)?;
    for (flag, ok) in [
        ("--ct", est.ct.is_finite() && est.ct > 0.0),
        ("--nx", est.nx >= 1),
        ("--grid", est.grid >= 2),
        ("--y1", est.y1.is_finite()),
        ("--y2", est.y2.is_finite() && est.y2 < est.y1),
    ] {
        if !ok {
            return Err(Error::Usage(format!("invalid value for {flag}")));
        }
    }
    let mut fit = FitOptions {
        bandwidths,
        c_t: est.ct,
        n_x: est.nx,
        y1: est.y1,
        y2: est.y2,
        ..FitOptions::default()
    };
    if let Some((b_method, tau, beta)) = msd {
        if !(0.0 < tau && tau < beta && beta < 1.0) {
            return Err(Error::Usage("--tau and --beta need 0 < tau < beta < 1".into()));
        }
        fit.b_method = match b_method {
            BMethodArg::Tilde => BMethod::Tilde,
            BMethodArg::Msd => BMethod::Msd,
        };
        fit.tau = tau;
        fit.beta = beta;
    }
    let (n, seed) = sample.map_or((DEFAULT_N, DEFAULT_SEED), |s| (s.n, s.seed));
    let mut sim = SimConfig::new(n, reps.unwrap_or(DEFAULT_REPS), seed);
    sim.y1 = est.y1;
    sim.y2 = est.y2;
    sim.c_t = est.ct;
    sim.n_x = est.nx;
    sim.bandwidth_mode = bandwidths;
    if command == Command::Simulate {
        sim.validate().map_err(|e| Error::Usage(format!("--n/--reps: {e}")))?;
    }
    Ok(RunConfig {
        command,
        input_path,
        output_dir: est.out,
        fit,
        sim,
        grid: est.grid,
    })
}

/// Parses `argv` (program name first) into a validated configuration.
pub fn parse_args<I, T>(argv: I) -> Result<RunConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Usage(e.render().to_string()))?;
    to_config(cli)
}

/// Reads a dataset with header `y,x1,...,xd`. Rows are numbered as lines of
/// the file (header is row 1) and columns from 1.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = reader.records();
    let parse_err = |row, column, message: String| Error::Parse { row, column, message };
    let header = match records.next() {
        None => return Err(parse_err(0, 0, "empty file".into())),
        Some(h) => h.map_err(|e| parse_err(1, 0, e.to_string()))?,
    };
    let d = header.len().saturating_sub(1);
    if d == 0 || &header[0] != "y" || (1..=d).any(|j| header[j] != format!("x{j}")) {
        return Err(parse_err(1, 0, "header must be y,x1,...,xd".into()));
    }
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_err(row, 0, e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(parse_err(row, 0, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, j + 1, format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, j + 1, format!("non-finite value {field:?}")));
            }
            if j == 0 {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(parse_err(1, 0, "no data rows".into()));
    }
    Dataset::new(y, x, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub input: Option<PathBuf>,
    pub options: FitOptions,
    pub n: usize,
    pub d: usize,
    pub bandwidths: Bandwidths,
    pub components: ComponentEstimates,
    pub b_used: f64,
    pub msd: Option<MsdSummary>,
    pub lambda_range: (f64, f64),
    pub dropped_points: Vec<usize>,
    pub h_curve: Vec<(f64, Option<f64>)>,
    pub lambda_curve: Vec<(f64, Option<f64>)>,
}

impl FitReport {
    pub fn new(input: Option<PathBuf>, options: FitOptions, r: &FitResult, grid: usize) -> Self {
        let (lo, hi) = r.curve.range();
        Self {
            input,
            options,
            n: r.state.data().n(),
            d: r.state.data().d(),
            bandwidths: r.bandwidths,
            components: r.components.clone(),
            b_used: r.b_used,
            msd: r.msd.clone(),
            lambda_range: (lo, hi),
            dropped_points: r.curve.dropped().to_vec(),
            h_curve: tabulate(&r.transform, lo, r.y_upper, grid),
            lambda_curve: lambda_table(&r.curve, grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub input: Option<PathBuf>,
    pub n: usize,
    pub bandwidths: Bandwidths,
    pub lambda_range: (f64, f64),
    pub dropped_points: Vec<usize>,
    pub lambda_curve: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Report {
    Fit(FitReport),
    Simulate(SimReport),
    EvalLambda(LambdaReport),
}

fn lambda_table(curve: &crate::lambda::LambdaCurve, grid: usize) -> Vec<(f64, Option<f64>)> {
    let (lo, hi) = curve.range();
    linspace(lo, hi, grid).into_iter().map(|y| (y, curve.eval(y).ok())).collect()
}

fn write_curve(path: &Path, header: [&str; 2], rows: &[(f64, Option<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for (y, v) in rows {
        w.write_record([y.to_string(), v.map_or(String::new(), |v| v.to_string())])?;
    }
    w.flush()?;
    Ok(())
}

fn write_simulation(report: &SimReport, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("per_rep.csv"))?;
    w.write_record(["rep", "h_y", "h_x", "y0_hat", "b_tilde", "alpha2_hat", "t_n", "mise", "failure"])?;
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in &report.per_rep {
        w.write_record([
            r.rep.to_string(),
            cell(r.h_y),
            cell(r.h_x),
            cell(r.y0_hat),
            cell(r.b_tilde),
            cell(r.alpha2_hat),
            cell(r.t_n),
            cell(r.mise),
            r.failure.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("qq.csv"))?;
    w.write_record(["estimator", "theoretical", "sample"])?;
    for (name, qq) in [("y0_hat", &report.qq_y0), ("b_tilde", &report.qq_b_tilde)] {
        for (t, s) in qq.theoretical.iter().zip(&qq.sample) {
            w.write_record([name.to_string(), t.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and the curve tables into an existing directory.
pub fn write_report(report: &Report, dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Io(format!("output directory {} does not exist", dir.display())));
    }
    let mut f = File::create(dir.join("report.json"))?;
    serde_json::to_writer_pretty(&mut f, report)?;
    writeln!(f)?;
    match report {
        Report::Fit(r) => {
            write_curve(&dir.join("h_curve.csv"), ["y", "h"], &r.h_curve)?;
            write_curve(&dir.join("lambda_curve.csv"), ["y", "lambda"], &r.lambda_curve)?;
        }
        Report::Simulate(r) => write_simulation(r, dir)?,
        Report::EvalLambda(r) => write_curve(&dir.join("lambda_curve.csv"), ["y", "lambda"], &r.lambda_curve)?,
    }
    Ok(())
}

fn eval_lambda(cfg: &RunConfig) -> Result<LambdaReport> {
    let data = match &cfg.input_path {
        Some(p) => read_csv(p)?,
        None => design::generate(cfg.sim.n, &mut rep_rng(cfg.sim.seed, 0))?,
    };
    let kernel = KernelSpec::from_family(cfg.fit.kernel)?;
    let bandwidths = crate::fit::choose_bandwidths(&data, &kernel, cfg.fit.bandwidths)?;
    let weight = WeightSpec::new(
        (0..data.d()).map(|j| crate::smoothers::min_max(&data.x_column(j))).collect(),
        crate::lambda::WeightKind::Indicator,
    )?;
    let n = data.n();
    let state = SmootherState::new(data, kernel, bandwidths, 0)?;
    let opts = LambdaOptions {
        n_x: cfg.fit.n_x,
        cover: vec![cfg.fit.y2, cfg.fit.y1],
        on_degenerate: DegeneratePolicy::Trim,
        ..LambdaOptions::default()
    };
    let curve = build_lambda(&state, &weight, &opts)?;
    Ok(LambdaReport {
        input: cfg.input_path.clone(),
        n,
        bandwidths,
        lambda_range: curve.range(),
        dropped_points: curve.dropped().to_vec(),
        lambda_curve: lambda_table(&curve, cfg.grid),
    })
}

/// Runs the configured command and returns its report.
pub fn execute(cfg: &RunConfig) -> Result<Report> {
    match cfg.command {
        Command::Fit => {
            let path = cfg.input_path.as_ref().ok_or_else(|| Error::Usage("fit requires an input CSV path".into()))?;
            let r = fit(read_csv(path)?, &cfg.fit)?;
            Ok(Report::Fit(FitReport::new(Some(path.clone()), cfg.fit.clone(), &r, cfg.grid)))
        }
        Command::Simulate => Ok(Report::Simulate(mc_run(&cfg.sim)?)),
        Command::EvalLambda => Ok(Report::EvalLambda(eval_lambda(cfg)?)),
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = v
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool that is already initialized keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Entry point for the binary; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = to_config(cli).and_then(|cfg| {
        init_threads()?;
        let report = execute(&cfg)?;
        write_report(&report, &cfg.output_dir)?;
        Ok(report)
    });
    match outcome {
        Ok(Report::Simulate(r)) => {
            eprintln!(
                "{} of {} replications failed; mean y0_hat {:?}, mean b_tilde {:?}",
                r.failures, r.config.reps, r.y0_hat.mean, r.b_tilde.mean
            );
            0
        }
        Ok(_) => 0,
        Err(e @ Error::Usage(_)) => {
            eprintln!("{e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
