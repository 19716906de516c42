//! Command-line front end. Each subcommand parses its flags, calls one library
//! operation, and serializes the result.
//!
//! Exit status is 0 on success, 2 on usage errors, and 1 on validation or
//! runtime errors. Runtime errors also print one JSON line on standard error:
//! `{"error":"<kind>","message":"<text>"}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bounds::{self, EpsilonBound};
use crate::conformal::{calibrate, CalibrationSet, ConformalPredictor, KernelKind, KernelSpec};
use crate::error::{Error, Result};
use crate::harness::{self, ExperimentSpec};
use crate::latent::{GaussianLatentModel, SampleStream};
use crate::numfmt;
use crate::verifier::{self, VerificationConfig, DEFAULT_UPPER_BOUND};

const FORMATS: &str = "\
File formats:
  latent model (JSON)   {\"dim\": k, \"mean\": [k floats], \"cov_type\": \"diag\"|\"full\",
                         \"cov\": [k floats] or [[k floats] x k], \"label\": \"...\"}
  calibration set (CSV) first line `dim=<k>`, then one row of k comma-separated floats per point
  predictor (JSON)      written by `calibrate`; `calibration_ref` points at the calibration CSV,
                         relative to the predictor file's directory
  experiment spec (JSON) {\"n_grid\": [...], \"delta_grid\": [...], \"trials_per_cell\": int,
                         \"beta\": float, \"calibration_size\": int,
                         \"scenario\": \"synthetic_gaussian\"|\"from_files\", \"seed\": int}

Floats accept decimal or scientific notation. Seeds default to 0.";

#[derive(Debug, Parser)]
#[command(
    name = "oodcert",
    version,
    about = "Conformal OOD detection over latent space with Monte-Carlo PAC certification",
    after_help = FORMATS
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate a conformal predictor and write its snapshot
    #[command(after_help = FORMATS)]
    Calibrate(CalibrateArgs),
    /// Sample the latent model, count OOD predictions, and certify ε
    #[command(after_help = FORMATS)]
    Verify(VerifyArgs),
    /// Closed-form ε bounds (Chernoff, β-adjusted, and the zero-violation bound when r = 0)
    Bound(BoundArgs),
    /// Exact ε from bisection on the binomial scenario condition
    ExactBound(ExactBoundArgs),
    /// Least uniform relaxation λ* over sampled safety constraints
    #[command(after_help = FORMATS)]
    Scenario(ScenarioArgs),
    /// Run an (N, δ) grid and write table.csv, trials.csv, plot_data.csv
    #[command(after_help = FORMATS)]
    Experiment(HarnessArgs),
    /// Run a bound-violation study and write violation_stats.csv,
    /// violation_trials.csv, plot_data.csv
    #[command(after_help = FORMATS)]
    ViolationStudy(HarnessArgs),
}

fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let x: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(63) {
        Ok(x as u64)
    } else {
        Err(format!("`{s}` is not a whole number"))
    }
}

fn parse_kernel(s: &str) -> std::result::Result<KernelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Calibration set CSV
    #[arg(long)]
    pub calibration: PathBuf,
    /// Conformal significance level β in (0, 1)
    #[arg(long)]
    pub beta: f64,
    /// Kernel: uniform or gaussian
    #[arg(long, value_parser = parse_kernel, default_value = "uniform")]
    pub kernel: KernelKind,
    /// Kernel bandwidth (ball radius for uniform); Scott's rule if omitted
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Output predictor JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Latent model JSON
    #[arg(long)]
    pub model: PathBuf,
    /// Predictor JSON written by `calibrate`
    #[arg(long)]
    pub predictor: PathBuf,
    /// Number of Monte-Carlo samples N
    #[arg(long, value_parser = parse_count)]
    pub n: u64,
    /// Confidence parameter δ in (0, 1)
    #[arg(long)]
    pub delta: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Substream index within the seed
    #[arg(long, default_value_t = 0)]
    pub stream_index: u64,
    /// Worker threads; the report does not depend on this
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Also write the report JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Number of samples N
    #[arg(long, value_parser = parse_count)]
    pub n: u64,
    /// Observed violations r
    #[arg(long, value_parser = parse_count)]
    pub r: u64,
    /// Confidence parameter δ in (0, 1)
    #[arg(long)]
    pub delta: f64,
    /// Conformal β; adds the β-adjusted bound
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExactBoundArgs {
    /// Number of samples N
    #[arg(long, value_parser = parse_count)]
    pub n: u64,
    /// Observed violations r
    #[arg(long, value_parser = parse_count)]
    pub r: u64,
    /// Confidence parameter δ in (0, 1)
    #[arg(long)]
    pub delta: f64,
    /// Number of decision variables d
    #[arg(long, value_parser = parse_count, default_value = "1")]
    pub d: u64,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Predictor JSON written by `calibrate`
    #[arg(long)]
    pub predictor: PathBuf,
    /// Latent model JSON
    #[arg(long)]
    pub model: PathBuf,
    /// Number of sampled constraints N
    #[arg(long, value_parser = parse_count)]
    pub n: u64,
    /// Upper bound U on λ
    #[arg(long, default_value_t = DEFAULT_UPPER_BOUND)]
    pub u: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Substream index within the seed
    #[arg(long, default_value_t = 0)]
    pub stream_index: u64,
}

#[derive(Debug, Args)]
pub struct HarnessArgs {
    /// Experiment spec JSON
    #[arg(long)]
    pub spec: PathBuf,
    /// Directory for the CSV outputs (created if missing)
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct CalibrateSummary<'a> {
    out: &'a Path,
    #[serde(serialize_with = "numfmt::f64")]
    bandwidth: f64,
    #[serde(serialize_with = "numfmt::f64")]
    threshold: f64,
    threshold_index: usize,
    calibration_size: usize,
}

#[derive(Serialize)]
struct BoundOutput {
    n: u64,
    r: u64,
    #[serde(serialize_with = "numfmt::f64")]
    delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    chernoff: EpsilonBound,
    #[serde(skip_serializing_if = "Option::is_none")]
    adjusted: Option<EpsilonBound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    no_violation: Option<EpsilonBound>,
}

#[derive(Serialize)]
struct ExactBoundOutput {
    n: u64,
    r: u64,
    d: u64,
    #[serde(serialize_with = "numfmt::f64")]
    delta: f64,
    exact: EpsilonBound,
}

#[derive(Serialize)]
struct FilesOutput {
    files: Vec<PathBuf>,
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Path to store in a snapshot at `out` so that it finds `calibration`.
fn calibration_ref(calibration: &Path, out: &Path) -> PathBuf {
    let cal = fs::canonicalize(calibration).unwrap_or_else(|_| calibration.to_path_buf());
    let out_dir = out
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    match fs::canonicalize(out_dir) {
        Ok(dir) => cal.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or(cal),
        Err(_) => cal,
    }
}

fn run_calibrate(a: &CalibrateArgs) -> Result<String> {
    let cal = CalibrationSet::load_csv(&a.calibration)?;
    let kernel = match a.bandwidth {
        Some(h) => KernelSpec::fixed(a.kernel, h),
        None => KernelSpec::scott(a.kernel),
    };
    let predictor = calibrate(cal, kernel, a.beta)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    predictor.save(&a.out, calibration_ref(&a.calibration, &a.out))?;
    to_json(&CalibrateSummary {
        out: &a.out,
        bandwidth: predictor.bandwidth(),
        threshold: predictor.threshold(),
        threshold_index: predictor.threshold_index(),
        calibration_size: predictor.calibration().len(),
    })
}

fn load_pair(model: &Path, predictor: &Path) -> Result<(GaussianLatentModel, ConformalPredictor)> {
    Ok((GaussianLatentModel::load(model)?, ConformalPredictor::load(predictor)?))
}

fn run_verify(a: &VerifyArgs) -> Result<String> {
    let (model, predictor) = load_pair(&a.model, &a.predictor)?;
    let config = VerificationConfig::new(
        &model,
        &predictor,
        a.n,
        a.delta,
        SampleStream::new(a.seed, a.stream_index),
    )
    .with_workers(a.workers);
    let json = verifier::verify(&config)?.to_json_string();
    if let Some(out) = &a.out {
        write_text(out, &format!("{json}\n"))?;
    }
    Ok(json)
}

fn run_bound(a: &BoundArgs) -> Result<String> {
    let chernoff = bounds::epsilon_chernoff(a.n, a.r as f64, a.delta)?;
    let adjusted = a
        .beta
        .map(|b| bounds::epsilon_adjusted(a.n, a.r, a.delta, b))
        .transpose()?;
    let no_violation = (a.r == 0)
        .then(|| bounds::epsilon_no_violations(a.n, a.delta))
        .transpose()?;
    to_json(&BoundOutput {
        n: a.n,
        r: a.r,
        delta: a.delta,
        beta: a.beta,
        chernoff,
        adjusted,
        no_violation,
    })
}

fn run_exact_bound(a: &ExactBoundArgs) -> Result<String> {
    let exact = bounds::exact_epsilon(a.n, a.r, a.d, a.delta)?;
    to_json(&ExactBoundOutput {
        n: a.n,
        r: a.r,
        d: a.d,
        delta: a.delta,
        exact,
    })
}

fn run_scenario(a: &ScenarioArgs) -> Result<String> {
    let (model, predictor) = load_pair(&a.model, &a.predictor)?;
    if model.dim() != predictor.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: model has dimension {}, predictor has {}",
            model.dim(),
            predictor.dim()
        )));
    }
    let n = usize::try_from(a.n).map_err(|_| Error::Argument(format!("n = {} is too large", a.n)))?;
    let samples = model.sample(n, SampleStream::new(a.seed, a.stream_index))?;
    Ok(verifier::scenario_relax(&predictor, &samples, a.u)?.to_json_string())
}

fn run_experiment(a: &HarnessArgs) -> Result<String> {
    let spec = ExperimentSpec::load(&a.spec)?;
    let records = harness::run_grid(&spec)?;
    to_json(&FilesOutput {
        files: harness::write_grid_outputs(&a.out_dir, &records)?,
    })
}

fn run_violation_study(a: &HarnessArgs) -> Result<String> {
    let spec = ExperimentSpec::load(&a.spec)?;
    let study = harness::violation_study(&spec)?;
    to_json(&FilesOutput {
        files: harness::write_study_outputs(&a.out_dir, &study)?,
    })
}

/// Executes a parsed command and returns the text for standard output.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Verify(a) => run_verify(a),
        Command::Bound(a) => run_bound(a),
        Command::ExactBound(a) => run_exact_bound(a),
        Command::Scenario(a) => run_scenario(a),
        Command::Experiment(a) => run_experiment(a),
        Command::ViolationStudy(a) => run_violation_study(a),
    }
}

/// The JSON line printed on standard error for a failed command.
pub fn error_line(e: &Error) -> String {
    serde_json::json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

/// Process entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(text) => {
            let mut out = std::io::stdout().lock();
            // a closed stdout is not worth a failure status
            let _ = writeln!(out, "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(1)
        }
    }
}
