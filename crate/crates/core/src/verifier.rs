//! Monte-Carlo certification of the OOD detector: sample the latent model, count
//! samples whose set prediction is empty, and turn the count into ε.
//!
//! Sample `i` is always drawn from position `i` of the configured stream. With `w`
//! workers, worker `j` handles the indices `i ≡ j (mod w)` and the per-worker counts
//! are summed, so the violation count does not depend on `w`.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{self, EpsilonBound};
use crate::conformal::ConformalPredictor;
use crate::error::{Error, Result};
use crate::latent::{GaussianLatentModel, LatentVector, SampleStream};
use crate::numfmt;

/// Default cap `U` on the relaxation λ. Conformity is normalized to `[0, 1]`, so
/// the slack `t* − conformity` never exceeds 1.
pub const DEFAULT_UPPER_BOUND: f64 = 1.0;

#[derive(Debug, Clone, Copy)]
pub struct VerificationConfig<'a> {
    pub model: &'a GaussianLatentModel,
    pub predictor: &'a ConformalPredictor,
    pub n_samples: u64,
    pub delta: f64,
    pub stream: SampleStream,
    pub workers: usize,
}

impl<'a> VerificationConfig<'a> {
    pub fn new(
        model: &'a GaussianLatentModel,
        predictor: &'a ConformalPredictor,
        n_samples: u64,
        delta: f64,
        stream: SampleStream,
    ) -> Self {
        Self {
            model,
            predictor,
            n_samples,
            delta,
            stream,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.model.dim() != self.predictor.dim() {
            return Err(Error::Argument(format!(
                "dimension mismatch: model has dimension {}, predictor has {}",
                self.model.dim(),
                self.predictor.dim()
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Argument("n_samples must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Argument(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.workers == 0 {
            return Err(Error::Argument("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of one certification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub n_samples: u64,
    pub violations: u64,
    #[serde(serialize_with = "numfmt::f64")]
    pub observed_rate: f64,
    /// Headline bound: Chernoff on the `(1 − β)`-discounted count.
    pub epsilon: EpsilonBound,
    pub epsilon_unadjusted: EpsilonBound,
    /// Exact inversion at `d = 1`.
    pub epsilon_exact: EpsilonBound,
    #[serde(serialize_with = "numfmt::f64")]
    pub delta: f64,
    #[serde(serialize_with = "numfmt::f64")]
    pub beta: f64,
    pub seed: u64,
    pub stream_index: u64,
    /// Wall-clock seconds.
    #[serde(serialize_with = "numfmt::f64")]
    pub elapsed: f64,
}

impl VerificationReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report fields are finite")
    }

    /// The JSON document with `elapsed` removed, for reproducibility checks.
    pub fn to_json_without_elapsed(&self) -> String {
        let mut copy = self.clone();
        copy.elapsed = 0.0;
        let mut value: serde_json::Value =
            serde_json::from_str(&copy.to_json_string()).expect("own output parses");
        value.as_object_mut().expect("object").remove("elapsed");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }
}

/// Number of samples with an empty set prediction.
pub fn count_violations(predictor: &ConformalPredictor, samples: &[LatentVector]) -> Result<u64> {
    if let Some(i) = samples.iter().position(|s| s.dim() != predictor.dim()) {
        return Err(Error::Argument(format!(
            "sample {i} has dimension {}, predictor has {}",
            samples[i].dim(),
            predictor.dim()
        )));
    }
    Ok(samples
        .par_iter()
        .filter(|s| predictor.is_null_unchecked(s.coords()))
        .count() as u64)
}

/// Null-prediction count over samples `0..n` of `stream`, without materializing
/// them.
pub(crate) fn count_stream_violations(
    model: &GaussianLatentModel,
    predictor: &ConformalPredictor,
    stream: SampleStream,
    n: u64,
    workers: usize,
) -> u64 {
    let cursor = stream.cursor();
    let k = model.dim();
    let w = workers as u64;
    (0..w)
        .into_par_iter()
        .map(|j| {
            let mut buf = vec![0.0; k];
            let mut r = 0u64;
            let mut i = j;
            while i < n {
                model.fill_sample(&cursor, i, &mut buf);
                if predictor.is_null_unchecked(&buf) {
                    r += 1;
                }
                i += w;
            }
            r
        })
        .sum()
}

/// Runs the certification loop and computes all three ε variants.
pub fn verify(config: &VerificationConfig<'_>) -> Result<VerificationReport> {
    config.validate()?;
    let start = Instant::now();
    let n = config.n_samples;
    let r = count_stream_violations(
        config.model,
        config.predictor,
        config.stream,
        n,
        config.workers,
    );
    let beta = config.predictor.beta();
    let epsilon = bounds::epsilon_adjusted(n, r, config.delta, beta)?;
    let epsilon_unadjusted = bounds::epsilon_chernoff(n, r as f64, config.delta)?;
    let epsilon_exact = bounds::exact_epsilon(n, r, 1, config.delta)?;
    Ok(VerificationReport {
        n_samples: n,
        violations: r,
        observed_rate: r as f64 / n as f64,
        epsilon,
        epsilon_unadjusted,
        epsilon_exact,
        delta: config.delta,
        beta,
        seed: config.stream.seed,
        stream_index: config.stream.stream_index,
        elapsed: start.elapsed().as_secs_f64(),
    })
}

/// Solution of the sampled relaxation `min λ s.t. t* − conformity(xᵢ) ≤ λ, 0 ≤ λ ≤ U`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScenarioResult {
    #[serde(serialize_with = "numfmt::f64")]
    pub lambda_star: f64,
    #[serde(serialize_with = "numfmt::f64")]
    pub upper_bound: f64,
    /// Samples with positive slack at λ = 0.
    pub violating_count: u64,
}

impl ScenarioResult {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite fields")
    }
}

/// Least uniform relaxation that makes every sampled constraint feasible.
pub fn scenario_relax(
    predictor: &ConformalPredictor,
    samples: &[LatentVector],
    upper_bound: f64,
) -> Result<ScenarioResult> {
    if !(upper_bound.is_finite() && upper_bound > 0.0) {
        return Err(Error::Argument(format!(
            "upper bound U must be positive and finite, got {upper_bound}"
        )));
    }
    if let Some(i) = samples.iter().position(|s| s.dim() != predictor.dim()) {
        return Err(Error::Argument(format!(
            "sample {i} has dimension {}, predictor has {}",
            samples[i].dim(),
            predictor.dim()
        )));
    }
    let t = predictor.threshold();
    let (max_slack, violating) = samples
        .par_iter()
        .map(|s| {
            let slack = t - predictor.conformity_unchecked(s.coords());
            (slack, u64::from(slack > 0.0))
        })
        .reduce(|| (f64::NEG_INFINITY, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    Ok(ScenarioResult {
        lambda_star: max_slack.clamp(0.0, upper_bound),
        upper_bound,
        violating_count: violating,
    })
}
