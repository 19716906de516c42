//! The latent distribution θ: a multivariate Gaussian over ℝᵏ standing in for the
//! autoencoder's learnt encoding distribution.
//!
//! Models are loaded from the latent-model interchange format
//!
//! ```json
//! {"dim": 2, "mean": [0.0, 0.0], "cov_type": "diag", "cov": [1.0, 1.0], "label": "prior"}
//! ```
//!
//! where `cov` is a variance vector for `"diag"` and a row-major `k×k` array for
//! `"full"`. Sampling uses the Cholesky transform `x = μ + L z` with `z ~ N(0, I)`.
//!
//! Randomness comes from [`SampleStream`]: a ChaCha8 keystream selected by
//! `(seed, stream_index)`. Sample `i` of a stream reads from its own fixed block of
//! the keystream, so its value depends only on `(seed, stream_index, i)` and never
//! on how the indices are split between workers.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numfmt;

/// Largest supported latent dimension. Each sample owns 2²⁰ keystream words,
/// which must cover the normal draws of one vector.
pub const MAX_DIM: usize = 1 << 16;

/// log2 of the number of 32-bit keystream words reserved for one sample.
const WORDS_PER_SAMPLE_LOG2: u32 = 20;

/// A point in latent space. All coordinates are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Argument(
                "latent vector needs at least one coordinate".into(),
            ));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Argument(format!(
                "latent coordinate {i} is not finite ({})",
                coords[i]
            )));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for LatentVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Per-coordinate variances.
    Diagonal(Vec<f64>),
    /// Dense symmetric matrix, one `Vec` per row.
    Full(Vec<Vec<f64>>),
}

impl Covariance {
    fn type_tag(&self) -> &'static str {
        match self {
            Covariance::Diagonal(_) => "diag",
            Covariance::Full(_) => "full",
        }
    }
}

/// Cached square-root factor of the covariance.
#[derive(Debug, Clone)]
enum Factor {
    /// Standard deviations.
    Diagonal(Vec<f64>),
    /// Lower-triangular Cholesky factor, row-major `k×k`.
    Lower(Vec<f64>),
}

/// Identifies one reproducible random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SampleStream {
    pub seed: u64,
    pub stream_index: u64,
}

impl SampleStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        Self { seed, stream_index }
    }

    pub(crate) fn cursor(&self) -> StreamCursor {
        let mut base = ChaCha8Rng::seed_from_u64(self.seed);
        base.set_stream(self.stream_index);
        StreamCursor { base }
    }
}

/// Random access into a [`SampleStream`] by sample index.
#[derive(Clone)]
pub(crate) struct StreamCursor {
    base: ChaCha8Rng,
}

impl StreamCursor {
    pub(crate) fn rng_at(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.base.clone();
        rng.set_word_pos(u128::from(index) << WORDS_PER_SAMPLE_LOG2);
        rng
    }
}

/// Multivariate Gaussian latent distribution. Immutable once built.
#[derive(Debug, Clone)]
pub struct GaussianLatentModel {
    mean: Vec<f64>,
    covariance: Covariance,
    label: String,
    factor: Factor,
    log_det: f64,
}

impl GaussianLatentModel {
    /// Validates the parameters and caches the Cholesky factor.
    pub fn new(mean: Vec<f64>, covariance: Covariance, label: impl Into<String>) -> Result<Self> {
        let k = mean.len();
        if k == 0 {
            return Err(Error::Validation("model dimension must be at least 1".into()));
        }
        if k > MAX_DIM {
            return Err(Error::Validation(format!(
                "model dimension {k} exceeds the supported maximum {MAX_DIM}"
            )));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::Validation(format!("mean[{i}] is not finite")));
        }
        let (factor, log_det) = match &covariance {
            Covariance::Diagonal(var) => {
                if var.len() != k {
                    return Err(Error::Validation(format!(
                        "diagonal covariance has {} entries, expected {k}",
                        var.len()
                    )));
                }
                if let Some(i) = var.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Validation(format!(
                        "covariance is not positive definite: variance[{i}] = {}",
                        var[i]
                    )));
                }
                let log_det = var.iter().map(|v| v.ln()).sum();
                (Factor::Diagonal(var.iter().map(|v| v.sqrt()).collect()), log_det)
            }
            Covariance::Full(rows) => {
                if rows.len() != k || rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Validation(format!(
                        "full covariance must be {k}×{k}"
                    )));
                }
                for i in 0..k {
                    for j in 0..i {
                        let (a, b) = (rows[i][j], rows[j][i]);
                        if !a.is_finite() || !b.is_finite() {
                            return Err(Error::Validation(format!(
                                "covariance[{i}][{j}] is not finite"
                            )));
                        }
                        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
                            return Err(Error::Validation(format!(
                                "covariance is not symmetric at ({i}, {j}): {a} vs {b}"
                            )));
                        }
                    }
                }
                let m = DMatrix::from_fn(k, k, |i, j| rows[i][j]);
                let chol = m.cholesky().ok_or_else(|| {
                    Error::Validation(
                        "covariance is not positive definite (Cholesky factorization failed)"
                            .into(),
                    )
                })?;
                let l = chol.l();
                let log_det = 2.0 * (0..k).map(|i| l[(i, i)].ln()).sum::<f64>();
                let mut lower = vec![0.0; k * k];
                for i in 0..k {
                    for j in 0..=i {
                        lower[i * k + j] = l[(i, j)];
                    }
                }
                (Factor::Lower(lower), log_det)
            }
        };
        if !log_det.is_finite() {
            return Err(Error::Validation(
                "covariance determinant underflows or overflows".into(),
            ));
        }
        Ok(Self {
            mean,
            covariance,
            label: label.into(),
            factor,
            log_det,
        })
    }

    /// `N(0, I_k)`.
    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::new(
            vec![0.0; dim],
            Covariance::Diagonal(vec![1.0; dim]),
            "standard_normal",
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// The lower-triangular factor `L` with `L Lᵀ = Σ`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        let k = self.dim();
        match &self.factor {
            Factor::Diagonal(sd) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(sd)),
            Factor::Lower(l) => DMatrix::from_row_slice(k, k, l),
        }
    }

    /// `ln det Σ`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: Value =
            serde_json::from_str(text).map_err(|e| Error::format("<document>", e.to_string()))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::format("<document>", "expected a JSON object"))?;

        let dim = obj
            .get("dim")
            .ok_or_else(|| Error::format("dim", "missing"))?
            .as_u64()
            .ok_or_else(|| Error::format("dim", "expected a positive integer"))?;
        if dim == 0 {
            return Err(Error::format("dim", "must be at least 1"));
        }
        let dim = usize::try_from(dim).map_err(|_| Error::format("dim", "too large"))?;

        let mean = float_array(obj.get("mean"), "mean")?;
        if mean.len() != dim {
            return Err(Error::format(
                "mean",
                format!("has {} entries, expected dim = {dim}", mean.len()),
            ));
        }

        let cov_type = obj
            .get("cov_type")
            .ok_or_else(|| Error::format("cov_type", "missing"))?
            .as_str()
            .ok_or_else(|| Error::format("cov_type", "expected \"diag\" or \"full\""))?;
        let cov_value = obj.get("cov");
        let covariance = match cov_type {
            "diag" => {
                let var = float_array(cov_value, "cov")?;
                if var.len() != dim {
                    return Err(Error::format(
                        "cov",
                        format!("has {} variances, expected dim = {dim}", var.len()),
                    ));
                }
                Covariance::Diagonal(var)
            }
            "full" => {
                let rows = cov_value
                    .ok_or_else(|| Error::format("cov", "missing"))?
                    .as_array()
                    .ok_or_else(|| Error::format("cov", "expected an array of rows"))?;
                if rows.len() != dim {
                    return Err(Error::format(
                        "cov",
                        format!("has {} rows, expected dim = {dim}", rows.len()),
                    ));
                }
                let rows = rows
                    .iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let field = format!("cov[{i}]");
                        let row = float_array(Some(row), &field)?;
                        if row.len() != dim {
                            return Err(Error::format(
                                field,
                                format!("has {} entries, expected dim = {dim}", row.len()),
                            ));
                        }
                        Ok(row)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Covariance::Full(rows)
            }
            other => {
                return Err(Error::format(
                    "cov_type",
                    format!("unknown covariance type {other:?}"),
                ))
            }
        };

        let label = match obj.get("label") {
            None | Some(Value::Null) => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(Error::format("label", "expected a string")),
        };

        Self::new(mean, covariance, label)
    }

    pub fn to_json_string(&self) -> String {
        #[derive(Serialize)]
        struct ModelFile<'a> {
            dim: usize,
            #[serde(serialize_with = "numfmt::vec")]
            mean: &'a [f64],
            cov_type: &'static str,
            cov: CovField<'a>,
            label: &'a str,
        }
        #[derive(Serialize)]
        #[serde(untagged)]
        enum CovField<'a> {
            Diag(#[serde(serialize_with = "numfmt::vec")] &'a [f64]),
            Full(#[serde(serialize_with = "numfmt::matrix")] &'a [Vec<f64>]),
        }
        let cov = match &self.covariance {
            Covariance::Diagonal(v) => CovField::Diag(v),
            Covariance::Full(rows) => CovField::Full(rows),
        };
        let file = ModelFile {
            dim: self.dim(),
            mean: &self.mean,
            cov_type: self.covariance.type_tag(),
            cov,
            label: &self.label,
        };
        serde_json::to_string_pretty(&file).expect("model fields are finite")
    }

    /// Writes sample `index` of the stream behind `cursor` into `out`.
    pub(crate) fn fill_sample(&self, cursor: &StreamCursor, index: u64, out: &mut [f64]) {
        let k = self.dim();
        debug_assert_eq!(out.len(), k);
        let mut rng = cursor.rng_at(index);
        match &self.factor {
            Factor::Diagonal(sd) => {
                for j in 0..k {
                    let z: f64 = rng.sample(StandardNormal);
                    out[j] = self.mean[j] + sd[j] * z;
                }
            }
            Factor::Lower(l) => {
                let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..k {
                    let row = &l[i * k..i * k + i + 1];
                    out[i] = self.mean[i]
                        + row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }

    /// `n` i.i.d. draws, deterministic in `stream`.
    pub fn sample(&self, n: usize, stream: SampleStream) -> Result<Vec<LatentVector>> {
        if n == 0 {
            return Err(Error::Argument("sample count must be at least 1".into()));
        }
        let cursor = stream.cursor();
        let k = self.dim();
        Ok((0..n as u64)
            .into_par_iter()
            .map(|i| {
                let mut buf = vec![0.0; k];
                self.fill_sample(&cursor, i, &mut buf);
                LatentVector(buf)
            })
            .collect())
    }

    /// Exact log probability density at `x`.
    pub fn log_density(&self, x: &LatentVector) -> Result<f64> {
        let k = self.dim();
        if x.dim() != k {
            return Err(Error::Argument(format!(
                "dimension mismatch: point has {} coordinates, model has {k}",
                x.dim()
            )));
        }
        let quad = match &self.factor {
            Factor::Diagonal(sd) => x
                .coords()
                .iter()
                .zip(&self.mean)
                .zip(sd)
                .map(|((xi, mi), s)| ((xi - mi) / s).powi(2))
                .sum::<f64>(),
            Factor::Lower(l) => {
                // forward substitution L y = x - μ
                let mut y = vec![0.0; k];
                for i in 0..k {
                    let mut acc = x.coords()[i] - self.mean[i];
                    for j in 0..i {
                        acc -= l[i * k + j] * y[j];
                    }
                    y[i] = acc / l[i * k + i];
                }
                y.iter().map(|v| v * v).sum()
            }
        };
        Ok(-0.5 * ((k as f64) * (2.0 * PI).ln() + self.log_det + quad))
    }
}

fn float_array(value: Option<&Value>, field: &str) -> Result<Vec<f64>> {
    let arr = value
        .ok_or_else(|| Error::format(field, "missing"))?
        .as_array()
        .ok_or_else(|| Error::format(field, "expected an array of numbers"))?;
    arr.iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::format(format!("{field}[{i}]"), "expected a finite number"))
        })
        .collect()
}
