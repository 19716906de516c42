//! Experiment harness: (N, δ) grids in the style of a results table, bound-violation
//! studies, and CSV emission for plotting.
//!
//! An experiment is described by a JSON spec:
//!
//! ```json
//! {"n_grid": [100, 1000, 10000], "delta_grid": [1e-6], "trials_per_cell": 5,
//!  "beta": 0.0275, "calibration_size": 200, "scenario": "synthetic_gaussian",
//!  "seed": 0}
//! ```
//!
//! Optional fields: `kernel` ("uniform" or "gaussian", default "uniform"),
//! `bandwidth` (default Scott), `latent_dim` (synthetic scenario, default 2),
//! `model_path` and `calibration_path` (file scenario), `pilot_factor` (default
//! 100), `per_trial` (default false), `recalibrate_per_cell` (default false),
//! `reference_epsilon` (overrides the pilot reference), and `workers` (default 1).
//!
//! Cells are ordered `n_grid`-major, then by `delta_grid`. Every trial draws from
//! its own substream, so outputs depend only on the spec.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::bounds;
use crate::conformal::{calibrate, CalibrationSet, ConformalPredictor, KernelKind, KernelSpec};
use crate::error::{Error, Result};
use crate::latent::{GaussianLatentModel, SampleStream};
use crate::numfmt;
use crate::verifier::count_stream_violations;

const CALIBRATION_STREAM_BASE: u64 = 1 << 40;
const PILOT_STREAM_BASE: u64 = 1 << 41;
const STUDY_STREAM_BASE: u64 = 1 << 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Calibration and test samples both drawn from a standard normal of
    /// dimension `latent_dim`.
    SyntheticGaussian,
    /// Latent model and calibration set read from `model_path` and
    /// `calibration_path`.
    FromFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(deserialize_with = "counts")]
    pub n_grid: Vec<u64>,
    pub delta_grid: Vec<f64>,
    #[serde(deserialize_with = "count")]
    pub trials_per_cell: u64,
    pub beta: f64,
    #[serde(deserialize_with = "count")]
    pub calibration_size: u64,
    pub scenario: Scenario,
    pub seed: u64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_path: Option<PathBuf>,
    /// Pilot size of a violation study as a multiple of N.
    #[serde(default = "default_pilot_factor", deserialize_with = "count")]
    pub pilot_factor: u64,
    /// Violation study: compare the pilot rate against each trial's own ε.
    #[serde(default)]
    pub per_trial: bool,
    /// Calibrate a fresh detector for every cell instead of one per experiment.
    #[serde(default)]
    pub recalibrate_per_cell: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_epsilon: Option<f64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_kernel() -> KernelKind {
    KernelKind::Uniform
}

fn default_latent_dim() -> usize {
    2
}

fn default_pilot_factor() -> u64 {
    100
}

fn default_workers() -> usize {
    1
}

/// Accepts `10000` as well as `1e4`.
fn as_count(x: f64) -> Option<u64> {
    (x.is_finite() && x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(63)).then_some(x as u64)
}

fn count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    let x = f64::deserialize(d)?;
    as_count(x).ok_or_else(|| serde::de::Error::custom(format!("{x} is not a whole number")))
}

fn counts<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<u64>, D::Error> {
    Vec::<f64>::deserialize(d)?
        .into_iter()
        .map(|x| {
            as_count(x).ok_or_else(|| serde::de::Error::custom(format!("{x} is not a whole number")))
        })
        .collect()
}

impl ExperimentSpec {
    /// A synthetic-scenario spec with every optional field at its default.
    pub fn synthetic(
        n_grid: Vec<u64>,
        delta_grid: Vec<f64>,
        trials_per_cell: u64,
        beta: f64,
        calibration_size: u64,
        seed: u64,
    ) -> Self {
        Self {
            n_grid,
            delta_grid,
            trials_per_cell,
            beta,
            calibration_size,
            scenario: Scenario::SyntheticGaussian,
            seed,
            kernel: default_kernel(),
            bandwidth: None,
            latent_dim: default_latent_dim(),
            model_path: None,
            calibration_path: None,
            pilot_factor: default_pilot_factor(),
            per_trial: false,
            recalibrate_per_cell: false,
            reference_epsilon: None,
            workers: default_workers(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::format("spec", e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file. Relative file-scenario paths resolve against the
    /// spec's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_json_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut spec.model_path, &mut spec.calibration_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.n_grid.is_empty() || self.delta_grid.is_empty() {
            return arg("n_grid and delta_grid must be non-empty".into());
        }
        if let Some(n) = self.n_grid.iter().find(|&&n| n == 0) {
            return arg(format!("n_grid entries must be at least 1, got {n}"));
        }
        if let Some(d) = self.delta_grid.iter().find(|&&d| !(d > 0.0 && d < 1.0)) {
            return arg(format!("delta_grid entries must lie in (0, 1), got {d}"));
        }
        if self.trials_per_cell == 0 {
            return arg("trials_per_cell must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return arg(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.calibration_size < 2 {
            return arg(format!(
                "calibration_size must be at least 2, got {}",
                self.calibration_size
            ));
        }
        if self.latent_dim == 0 {
            return arg("latent_dim must be at least 1".into());
        }
        if let Some(h) = self.bandwidth {
            if !(h.is_finite() && h > 0.0) {
                return arg(format!("bandwidth must be positive, got {h}"));
            }
        }
        if self.pilot_factor == 0 {
            return arg("pilot_factor must be at least 1".into());
        }
        if let Some(e) = self.reference_epsilon {
            if !(e > 0.0 && e <= 1.0) {
                return arg(format!("reference_epsilon must lie in (0, 1], got {e}"));
            }
        }
        if self.workers == 0 {
            return arg("workers must be at least 1".into());
        }
        Ok(())
    }

    fn kernel_spec(&self) -> KernelSpec {
        match self.bandwidth {
            Some(h) => KernelSpec::fixed(self.kernel, h),
            None => KernelSpec::scott(self.kernel),
        }
    }

    /// `(N, δ)` for every cell, in output order.
    pub fn cells(&self) -> Vec<(u64, f64)> {
        self.n_grid
            .iter()
            .flat_map(|&n| self.delta_grid.iter().map(move |&d| (n, d)))
            .collect()
    }
}

/// One verification trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub n: u64,
    #[serde(serialize_with = "numfmt::f64")]
    pub delta: f64,
    pub trial_index: u64,
    pub violations: u64,
    #[serde(serialize_with = "numfmt::f64")]
    pub observed_rate: f64,
    #[serde(serialize_with = "numfmt::f64")]
    pub epsilon: f64,
    /// Grid runs and fixed-reference studies: `observed_rate > epsilon`. Per-trial
    /// studies: pilot rate `> epsilon`.
    pub exceeded: bool,
}

/// Summary of one bound-violation cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationStats {
    pub n: u64,
    #[serde(serialize_with = "numfmt::f64")]
    pub delta: f64,
    pub trials: u64,
    #[serde(serialize_with = "numfmt::f64")]
    pub exceed_fraction: f64,
    #[serde(serialize_with = "numfmt::f64")]
    pub reference_epsilon: f64,
    /// Violation rate estimated by the pilot.
    #[serde(serialize_with = "numfmt::f64")]
    pub reference_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationStudy {
    pub stats: Vec<ViolationStats>,
    pub records: Vec<TrialRecord>,
}

/// Latent model plus one predictor per cell.
struct Setup {
    model: GaussianLatentModel,
    predictors: Vec<ConformalPredictor>,
}

impl Setup {
    fn predictor(&self, cell: usize) -> &ConformalPredictor {
        &self.predictors[cell.min(self.predictors.len() - 1)]
    }
}

fn build(spec: &ExperimentSpec) -> Result<Setup> {
    spec.validate()?;
    let kernel = spec.kernel_spec();
    match spec.scenario {
        Scenario::SyntheticGaussian => {
            let model = GaussianLatentModel::standard_normal(spec.latent_dim)?;
            let n_cal = if spec.recalibrate_per_cell {
                spec.cells().len()
            } else {
                1
            };
            let predictors = (0..n_cal as u64)
                .into_par_iter()
                .map(|c| {
                    let stream = SampleStream::new(spec.seed, CALIBRATION_STREAM_BASE + c);
                    let points = model.sample(spec.calibration_size as usize, stream)?;
                    calibrate(CalibrationSet::new(points, "synthetic_gaussian")?, kernel, spec.beta)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Setup { model, predictors })
        }
        Scenario::FromFiles => {
            let missing = |what: &str| {
                Error::Argument(format!("scenario from_files requires `{what}` in the spec"))
            };
            let model_path = spec.model_path.as_ref().ok_or_else(|| missing("model_path"))?;
            let cal_path = spec
                .calibration_path
                .as_ref()
                .ok_or_else(|| missing("calibration_path"))?;
            let model = GaussianLatentModel::load(model_path)?;
            let cal = CalibrationSet::load_csv(cal_path)?;
            if cal.dim() != model.dim() {
                return Err(Error::Argument(format!(
                    "calibration dimension {} does not match model dimension {}",
                    cal.dim(),
                    model.dim()
                )));
            }
            let predictor = calibrate(cal, kernel, spec.beta)?;
            Ok(Setup {
                model,
                predictors: vec![predictor],
            })
        }
    }
}

fn run_trials(
    spec: &ExperimentSpec,
    setup: &Setup,
    stream_base: u64,
    // per cell: Some(reference ε) to compare against, None for each trial's own ε
    reference: &[Option<f64>],
    per_trial_rate: &[Option<f64>],
) -> Result<Vec<TrialRecord>> {
    let cells = spec.cells();
    let trials = spec.trials_per_cell;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(c, t)| {
            let (n, delta) = cells[c];
            let predictor = setup.predictor(c);
            let stream = SampleStream::new(spec.seed, stream_base + c as u64 * trials + t);
            let r = count_stream_violations(&setup.model, predictor, stream, n, spec.workers);
            let observed_rate = r as f64 / n as f64;
            let own = bounds::epsilon_adjusted(n, r, delta, spec.beta)?.value;
            let (epsilon, exceeded) = match (per_trial_rate[c], reference[c]) {
                (Some(p), _) => (own, p > own),
                (None, Some(e)) => (e, observed_rate > e),
                (None, None) => (own, observed_rate > own),
            };
            Ok(TrialRecord {
                n,
                delta,
                trial_index: t,
                violations: r,
                observed_rate,
                epsilon,
                exceeded,
            })
        })
        .collect()
}

/// One record per trial, `trials_per_cell` trials for every `(N, δ)` cell. Each
/// record carries the adjusted bound from its own violation count, unless the
/// spec fixes `reference_epsilon`.
pub fn run_grid(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    let setup = build(spec)?;
    let cells = spec.cells().len();
    run_trials(
        spec,
        &setup,
        0,
        &vec![spec.reference_epsilon; cells],
        &vec![None; cells],
    )
}

/// Bound-violation study. Per cell, a pilot of `pilot_factor·N` samples
/// estimates the violation rate `p̂`; the reference ε is the adjusted bound at
/// sample size N with count `N·p̂`. Then `trials_per_cell` fresh runs of N samples
/// each record whether their observed rate exceeds the reference.
pub fn violation_study(spec: &ExperimentSpec) -> Result<ViolationStudy> {
    let setup = build(spec)?;
    let cells = spec.cells();
    let pilots = cells
        .par_iter()
        .enumerate()
        .map(|(c, &(n, delta))| {
            let m = n.checked_mul(spec.pilot_factor).ok_or_else(|| {
                Error::Argument(format!("pilot size {n}·{} overflows", spec.pilot_factor))
            })?;
            let stream = SampleStream::new(spec.seed, PILOT_STREAM_BASE + c as u64);
            let r = count_stream_violations(&setup.model, setup.predictor(c), stream, m, spec.workers);
            let rate = r as f64 / m as f64;
            let eps = match spec.reference_epsilon {
                Some(e) => e,
                None => bounds::epsilon_adjusted_real(n, n as f64 * rate, delta, spec.beta)?.value,
            };
            Ok((rate, eps))
        })
        .collect::<Result<Vec<_>>>()?;

    let reference: Vec<_> = pilots.iter().map(|&(_, e)| Some(e)).collect();
    let rates: Vec<_> = pilots
        .iter()
        .map(|&(p, _)| spec.per_trial.then_some(p))
        .collect();
    let records = run_trials(spec, &setup, STUDY_STREAM_BASE, &reference, &rates)?;

    let per_cell = spec.trials_per_cell as usize;
    let stats = cells
        .iter()
        .zip(&pilots)
        .zip(records.chunks(per_cell))
        .map(|((&(n, delta), &(rate, eps)), chunk)| {
            let exceeded = chunk.iter().filter(|r| r.exceeded).count();
            ViolationStats {
                n,
                delta,
                trials: spec.trials_per_cell,
                exceed_fraction: exceeded as f64 / per_cell as f64,
                reference_epsilon: eps,
                reference_rate: rate,
            }
        })
        .collect();
    Ok(ViolationStudy { stats, records })
}

pub const TABLE_HEADER: &str = "N,delta,r,r/N,epsilon";
pub const TRIALS_HEADER: &str = "N,delta,trial_index,r,r/N,epsilon,exceeded";
pub const PLOT_HEADER: &str = "delta,N,trial_index,r/N,epsilon";
pub const STATS_HEADER: &str = "N,delta,trials,exceed_fraction,reference_epsilon,reference_rate";

// Display for f64 is the shortest string that parses back to the same value.

/// Table-style CSV: one row per record.
pub fn emit_table(records: &[TrialRecord]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.n, r.delta, r.violations, r.observed_rate, r.epsilon);
    }
    out
}

/// Every record field.
pub fn emit_trials(records: &[TrialRecord]) -> String {
    let mut out = format!("{TRIALS_HEADER}\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n, r.delta, r.trial_index, r.violations, r.observed_rate, r.epsilon, r.exceeded
        );
    }
    out
}

/// One series per δ (in order of first appearance), one row per trial.
pub fn emit_plot_data(records: &[TrialRecord]) -> String {
    let mut deltas: Vec<f64> = Vec::new();
    for r in records {
        if !deltas.iter().any(|d| d.to_bits() == r.delta.to_bits()) {
            deltas.push(r.delta);
        }
    }
    let mut out = format!("{PLOT_HEADER}\n");
    for d in deltas {
        for r in records.iter().filter(|r| r.delta.to_bits() == d.to_bits()) {
            let _ = writeln!(out, "{},{},{},{},{}", r.delta, r.n, r.trial_index, r.observed_rate, r.epsilon);
        }
    }
    out
}

pub fn emit_violation_stats(stats: &[ViolationStats]) -> String {
    let mut out = format!("{STATS_HEADER}\n");
    for s in stats {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.n, s.delta, s.trials, s.exceed_fraction, s.reference_epsilon, s.reference_rate
        );
    }
    out
}

fn write_files(dir: &Path, files: &[(&str, String)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    files
        .iter()
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Writes `table.csv`, `trials.csv`, and `plot_data.csv`.
pub fn write_grid_outputs(dir: impl AsRef<Path>, records: &[TrialRecord]) -> Result<Vec<PathBuf>> {
    write_files(
        dir.as_ref(),
        &[
            ("table.csv", emit_table(records)),
            ("trials.csv", emit_trials(records)),
            ("plot_data.csv", emit_plot_data(records)),
        ],
    )
}

/// Writes `violation_stats.csv`, `violation_trials.csv`, and `plot_data.csv`.
pub fn write_study_outputs(dir: impl AsRef<Path>, study: &ViolationStudy) -> Result<Vec<PathBuf>> {
    write_files(
        dir.as_ref(),
        &[
            ("violation_stats.csv", emit_violation_stats(&study.stats)),
            ("violation_trials.csv", emit_trials(&study.records)),
            ("plot_data.csv", emit_plot_data(&study.records)),
        ],
    )
}
