//! Conformal out-of-distribution safety constraints over a learnt latent space,
//! certified by Monte-Carlo sampling with PAC bounds on the detection failure rate.
//!
//! The pipeline has three stages:
//!
//! 1. [`conformal::calibrate`] turns a calibration set of latent encodings into a
//!    [`ConformalPredictor`]: kernel-density conformity scores, a β-percentile
//!    threshold `t*`, and the safe region `{x : conformity(x) ≥ t*}`.
//! 2. [`verifier::verify`] draws `N` samples from a [`GaussianLatentModel`], counts the
//!    samples whose set prediction is empty, and certifies ε with confidence `1 − δ`.
//! 3. [`bounds`] holds the closed-form and exact binomial bound mathematics, and
//!    [`harness`] reproduces grid and bound-violation studies on top of it.

pub mod bounds;
pub mod cli;
pub mod conformal;
pub mod error;
pub mod harness;
pub mod latent;
pub mod numfmt;
pub mod verifier;

pub use bounds::{BoundMethod, BoundQuery, EpsilonBound};
pub use conformal::{
    CalibrationSet, ConformalPredictor, KernelKind, KernelSpec, ScoreMode, SetPrediction,
};
pub use error::{Error, Result};
pub use harness::{ExperimentSpec, Scenario, TrialRecord, ViolationStats, ViolationStudy};
pub use latent::{Covariance, GaussianLatentModel, LatentVector, SampleStream};
pub use verifier::{ScenarioResult, VerificationConfig, VerificationReport};
