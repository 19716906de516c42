//! Kernel-density conformal prediction over latent space.
//!
//! Calibration scores every calibration point by its kernel density estimate
//! against the other points (leave-one-out), normalizes by the largest score, sorts,
//! and takes the `⌊β·n⌋`-th smallest score (1-based) as the threshold `t*`. A new
//! point is in-distribution iff its normalized density against the full
//! calibration set is at least `t*`; otherwise the set prediction is empty and the
//! point is flagged out-of-distribution.
//!
//! Calibration sets are read from CSV with a `dim=<k>` header line followed by one
//! row of `k` comma-separated floats per point. Calibrated predictors are
//! snapshotted as JSON:
//!
//! ```json
//! {"beta": 0.0275, "bandwidth": 0.83, "kernel": "uniform", "threshold": 0.12,
//!  "threshold_index": 5, "scores": [...], "calibration_ref": "cal.csv",
//!  "normalizer": 0.41, "leave_one_out": true}
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::latent::LatentVector;
use crate::numfmt;

/// Held-out in-distribution encodings used to fix the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    dim: usize,
    // row-major, `len() == n * dim`
    flat: Vec<f64>,
    source_label: String,
}

impl CalibrationSet {
    pub fn new(points: Vec<LatentVector>, source_label: impl Into<String>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Argument(format!(
                "calibration set needs at least 2 points, got {}",
                points.len()
            )));
        }
        let dim = points[0].dim();
        if let Some(i) = points.iter().position(|p| p.dim() != dim) {
            return Err(Error::Argument(format!(
                "calibration point {i} has dimension {}, expected {dim}",
                points[i].dim()
            )));
        }
        let flat = points.into_iter().flat_map(LatentVector::into_inner).collect();
        Ok(Self {
            dim,
            flat,
            source_label: source_label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.flat[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.flat.chunks_exact(self.dim)
    }

    /// Mean over coordinates of the per-coordinate sample standard deviation.
    pub fn mean_std(&self) -> f64 {
        let n = self.len() as f64;
        let k = self.dim;
        let mut total = 0.0;
        for j in 0..k {
            let mean = self.points().map(|p| p[j]).sum::<f64>() / n;
            let var = self.points().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            total += var.sqrt();
        }
        total / k as f64
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text, path.display().to_string())
    }

    pub fn from_csv_str(text: &str, source_label: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::format("header", "empty calibration file"))?;
        let dim: usize = header
            .trim()
            .strip_prefix("dim=")
            .ok_or_else(|| Error::format("header", format!("expected `dim=<k>`, got {header:?}")))?
            .trim()
            .parse()
            .map_err(|e| Error::format("header", format!("bad dimension: {e}")))?;
        if dim == 0 {
            return Err(Error::format("header", "dimension must be at least 1"));
        }
        let mut points = Vec::new();
        for (lineno, line) in lines {
            let field = format!("line {}", lineno + 1);
            let coords = line
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::format(field.clone(), format!("{c:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if coords.len() != dim {
                return Err(Error::format(
                    field,
                    format!("has {} values, expected {dim}", coords.len()),
                ));
            }
            points.push(
                LatentVector::new(coords).map_err(|e| Error::format(field, e.to_string()))?,
            );
        }
        Self::new(points, source_label)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("dim={}\n", self.dim);
        for p in self.points() {
            let row: Vec<String> = p.iter().map(|x| format!("{x:e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Indicator of the closed Euclidean ball of radius `h`.
    Uniform,
    /// `exp(−‖u‖² / 2h²)`.
    Gaussian,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::Uniform => "uniform",
            KernelKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(KernelKind::Uniform),
            "gaussian" => Ok(KernelKind::Gaussian),
            other => Err(Error::Argument(format!(
                "unknown kernel {other:?} (expected uniform or gaussian)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Scott's rule, resolved against the calibration set.
    Scott,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: Bandwidth,
}

impl KernelSpec {
    pub fn scott(kind: KernelKind) -> Self {
        Self {
            kind,
            bandwidth: Bandwidth::Scott,
        }
    }

    pub fn fixed(kind: KernelKind, h: f64) -> Self {
        Self {
            kind,
            bandwidth: Bandwidth::Fixed(h),
        }
    }

    /// Numeric bandwidth for `cal`.
    ///
    /// Scott's rule gives `σ̂·n^(−1/(k+4))` with σ̂ the mean per-coordinate
    /// standard deviation. That value is the Gaussian kernel's scale; the uniform
    /// kernel's radius is widened by `√(k+2)` so both kernels have the same
    /// per-coordinate variance.
    pub fn resolve(&self, cal: &CalibrationSet) -> Result<f64> {
        let h = match self.bandwidth {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Scott => {
                let k = cal.dim() as f64;
                let n = cal.len() as f64;
                let scale = cal.mean_std() * n.powf(-1.0 / (k + 4.0));
                match self.kind {
                    KernelKind::Gaussian => scale,
                    KernelKind::Uniform => scale * (k + 2.0).sqrt(),
                }
            }
        };
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::Argument(format!(
                "bandwidth must be positive and finite, got {h}"
            )));
        }
        Ok(h)
    }
}

/// A kernel with its bandwidth fixed to a number.
#[derive(Debug, Clone, Copy)]
struct Kernel {
    kind: KernelKind,
    h: f64,
    inv_two_h2: f64,
    h2: f64,
    /// Integral of the unnormalized kernel over ℝᵏ.
    mass: f64,
}

impl Kernel {
    fn new(kind: KernelKind, h: f64, dim: usize) -> Self {
        let k = dim as f64;
        let mass = match kind {
            // volume of the k-ball of radius h
            KernelKind::Uniform => (0.5 * k * PI.ln() - ln_gamma(0.5 * k + 1.0) + k * h.ln()).exp(),
            KernelKind::Gaussian => (2.0 * PI).powf(0.5 * k) * h.powf(k),
        };
        Self {
            kind,
            h,
            inv_two_h2: 1.0 / (2.0 * h * h),
            h2: h * h,
            mass,
        }
    }

    /// Density at `x` over the points of `cal`, skipping `exclude`.
    fn density(&self, cal: &CalibrationSet, x: &[f64], exclude: Option<usize>) -> f64 {
        let mut acc = 0.0;
        let mut used = 0usize;
        for (i, z) in cal.points().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            used += 1;
            let d2: f64 = z.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            match self.kind {
                KernelKind::Uniform => {
                    if d2 <= self.h2 {
                        acc += 1.0;
                    }
                }
                KernelKind::Gaussian => acc += (-d2 * self.inv_two_h2).exp(),
            }
        }
        acc / (used as f64 * self.mass)
    }
}

/// Kernel density estimate of `cal` at `x`, optionally leaving out one calibration
/// point.
pub fn kde_score(
    cal: &CalibrationSet,
    kernel: &KernelSpec,
    x: &LatentVector,
    exclude_index: Option<usize>,
) -> Result<f64> {
    if x.dim() != cal.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: point has {} coordinates, calibration set has {}",
            x.dim(),
            cal.dim()
        )));
    }
    if let Some(i) = exclude_index {
        if i >= cal.len() {
            return Err(Error::Argument(format!(
                "exclude index {i} out of range for {} calibration points",
                cal.len()
            )));
        }
        if cal.len() == 1 {
            return Err(Error::Argument("no calibration points left after exclusion".into()));
        }
    }
    let h = kernel.resolve(cal)?;
    Ok(Kernel::new(kernel.kind, h, cal.dim()).density(cal, x.coords(), exclude_index))
}

/// How calibration points are scored against their own set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Each point is scored against the other `n − 1` points.
    #[default]
    LeaveOneOut,
    /// Each point's own kernel term is included; for sensitivity studies.
    SelfInclusive,
}

/// 1-based threshold index `⌊β·n⌋`. The product is nudged by a relative 1e−12 so
/// that decimal inputs such as β = 0.29, n = 100 land on 29 rather than 28.
pub fn threshold_index(beta: f64, n: usize) -> Result<usize> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Argument(format!("beta must lie in (0, 1), got {beta}")));
    }
    let raw = beta * n as f64;
    let idx = (raw * (1.0 + 1e-12)).floor() as usize;
    if idx < 1 {
        return Err(Error::Argument(format!(
            "beta too small for calibration size: beta·n = {raw} < 1 (n = {n})"
        )));
    }
    Ok(idx.min(n))
}

/// Set prediction for the single in-distribution label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SetPrediction {
    InDistribution,
    /// The null prediction: the point conforms to no label and is flagged OOD.
    Empty,
}

impl SetPrediction {
    pub fn is_empty(&self) -> bool {
        matches!(self, SetPrediction::Empty)
    }
}

/// Calibrated conformal OOD detector. Immutable after [`calibrate`].
#[derive(Debug, Clone)]
pub struct ConformalPredictor {
    calibration: CalibrationSet,
    kernel: Kernel,
    beta: f64,
    scores: Vec<f64>,
    threshold: f64,
    threshold_index: usize,
    normalizer: f64,
    mode: ScoreMode,
}

/// Builds the predictor with leave-one-out calibration scores.
pub fn calibrate(cal: CalibrationSet, kernel: KernelSpec, beta: f64) -> Result<ConformalPredictor> {
    calibrate_with(cal, kernel, beta, ScoreMode::LeaveOneOut)
}

pub fn calibrate_with(
    cal: CalibrationSet,
    kernel: KernelSpec,
    beta: f64,
    mode: ScoreMode,
) -> Result<ConformalPredictor> {
    let n = cal.len();
    if n < 2 {
        return Err(Error::Argument("calibration set needs at least 2 points".into()));
    }
    let idx = threshold_index(beta, n)?;
    let h = kernel.resolve(&cal)?;
    let kern = Kernel::new(kernel.kind, h, cal.dim());

    // collect() keeps index order, so the score list is bit-identical to a serial loop
    let raw: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let exclude = match mode {
                ScoreMode::LeaveOneOut => Some(i),
                ScoreMode::SelfInclusive => None,
            };
            kern.density(&cal, cal.point(i), exclude)
        })
        .collect();

    let normalizer = raw.iter().copied().fold(0.0_f64, f64::max);
    if normalizer <= 0.0 {
        return Err(Error::DegenerateCalibration(format!(
            "all calibration scores are zero at bandwidth {h}; enlarge the bandwidth"
        )));
    }
    let mut scores: Vec<f64> = raw.iter().map(|s| s / normalizer).collect();
    scores.sort_by(f64::total_cmp);
    let threshold = scores[idx - 1];

    Ok(ConformalPredictor {
        calibration: cal,
        kernel: kern,
        beta,
        scores,
        threshold,
        threshold_index: idx,
        normalizer,
        mode,
    })
}

impl ConformalPredictor {
    pub fn calibration(&self) -> &CalibrationSet {
        &self.calibration
    }

    pub fn dim(&self) -> usize {
        self.calibration.dim()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn kernel(&self) -> KernelKind {
        self.kernel.kind
    }

    pub fn bandwidth(&self) -> f64 {
        self.kernel.h
    }

    /// Normalized calibration scores, ascending. The largest is exactly 1.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// 1-based position of the threshold in [`Self::scores`].
    pub fn threshold_index(&self) -> usize {
        self.threshold_index
    }

    /// Raw density that maps to conformity 1.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn score_mode(&self) -> ScoreMode {
        self.mode
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Argument(format!(
                "dimension mismatch: point has {} coordinates, predictor has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Conformity of a raw coordinate slice; the caller guarantees the dimension.
    pub(crate) fn conformity_unchecked(&self, x: &[f64]) -> f64 {
        self.kernel.density(&self.calibration, x, None) / self.normalizer
    }

    /// Normalized density of `x` against the whole calibration set. Not clamped:
    /// values above 1 mean `x` sits denser than any calibration point did.
    pub fn conformity(&self, x: &LatentVector) -> Result<f64> {
        self.check_dim(x.coords())?;
        Ok(self.conformity_unchecked(x.coords()))
    }

    pub fn conformity_slice(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.conformity_unchecked(x))
    }

    pub(crate) fn is_null_unchecked(&self, x: &[f64]) -> bool {
        !(self.conformity_unchecked(x) >= self.threshold)
    }

    /// `{in-distribution}` iff `conformity(x) ≥ t*`, else the empty set.
    pub fn predict_set(&self, x: &LatentVector) -> Result<SetPrediction> {
        self.check_dim(x.coords())?;
        Ok(if self.is_null_unchecked(x.coords()) {
            SetPrediction::Empty
        } else {
            SetPrediction::InDistribution
        })
    }

    /// Membership in the safe region.
    pub fn is_safe(&self, x: &LatentVector) -> Result<bool> {
        Ok(!self.predict_set(x)?.is_empty())
    }

    pub fn snapshot(&self, calibration_ref: impl Into<PathBuf>) -> PredictorSnapshot {
        PredictorSnapshot {
            beta: self.beta,
            bandwidth: self.kernel.h,
            kernel: self.kernel.kind,
            threshold: self.threshold,
            threshold_index: self.threshold_index,
            scores: self.scores.clone(),
            calibration_ref: calibration_ref.into(),
            normalizer: Some(self.normalizer),
            leave_one_out: self.mode == ScoreMode::LeaveOneOut,
        }
    }

    /// Writes the snapshot JSON. `calibration_ref` is recorded verbatim.
    pub fn save(&self, path: impl AsRef<Path>, calibration_ref: impl Into<PathBuf>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.snapshot(calibration_ref).to_json_string())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a snapshot and rebuilds the predictor from its calibration file.
    /// Relative `calibration_ref` paths resolve against the snapshot's directory
    /// first, then the working directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap = PredictorSnapshot::from_json_str(&text)?;
        let cal_path = resolve_ref(path, &snap.calibration_ref);
        let cal = CalibrationSet::load_csv(&cal_path)?;
        snap.restore(cal)
    }
}

fn resolve_ref(snapshot_path: &Path, reference: &Path) -> PathBuf {
    if reference.is_absolute() {
        return reference.to_path_buf();
    }
    if let Some(dir) = snapshot_path.parent() {
        let candidate = dir.join(reference);
        if candidate.exists() {
            return candidate;
        }
    }
    reference.to_path_buf()
}

/// Serialized form of a [`ConformalPredictor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSnapshot {
    #[serde(serialize_with = "numfmt::f64")]
    pub beta: f64,
    #[serde(serialize_with = "numfmt::f64")]
    pub bandwidth: f64,
    pub kernel: KernelKind,
    #[serde(serialize_with = "numfmt::f64")]
    pub threshold: f64,
    pub threshold_index: usize,
    #[serde(serialize_with = "numfmt::vec")]
    pub scores: Vec<f64>,
    pub calibration_ref: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none", serialize_with = "opt_f64")]
    pub normalizer: Option<f64>,
    #[serde(default = "default_true")]
    pub leave_one_out: bool,
}

fn default_true() -> bool {
    true
}

fn opt_f64<S: serde::Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match x {
        Some(v) => numfmt::f64(v, s),
        None => s.serialize_none(),
    }
}

impl PredictorSnapshot {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot fields are finite")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format("predictor snapshot", e.to_string()))
    }

    /// Recalibrates on `cal` with the recorded settings and checks that the
    /// recorded scores and threshold are reproduced.
    pub fn restore(&self, cal: CalibrationSet) -> Result<ConformalPredictor> {
        let mode = if self.leave_one_out {
            ScoreMode::LeaveOneOut
        } else {
            ScoreMode::SelfInclusive
        };
        if self.scores.len() != cal.len() {
            return Err(Error::Validation(format!(
                "snapshot has {} scores but the calibration set has {} points",
                self.scores.len(),
                cal.len()
            )));
        }
        let pred = calibrate_with(cal, KernelSpec::fixed(self.kernel, self.bandwidth), self.beta, mode)?;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300);
        let scores_match = pred.scores.iter().zip(&self.scores).all(|(a, b)| close(*a, *b));
        if pred.threshold_index != self.threshold_index
            || !close(pred.threshold, self.threshold)
            || !scores_match
        {
            return Err(Error::Validation(
                "snapshot scores do not match its calibration set".into(),
            ));
        }
        Ok(pred)
    }
}
