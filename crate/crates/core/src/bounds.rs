//! PAC bounds on the constraint-violation probability ε from `N` sampled
//! scenarios with `r` violations, at confidence `1 − δ`.
//!
//! * [`binomial_condition_holds`] evaluates the exact scenario condition
//!   `C(r+d−1, r) · Σ_{i=0}^{r+d−1} C(N,i) εⁱ (1−ε)^{N−i} ≤ δ` in log space.
//! * [`exact_epsilon`] inverts that condition by bisection.
//! * [`epsilon_no_violations`] is the `r = 0, d = 1` closed form `1 − δ^{1/N}`.
//! * [`epsilon_chernoff`] is the Chernoff relaxation
//!   `min{1, (r + L + √(L² + 2rL)) / N}` with `L = ln(1/δ)`, which dominates the
//!   exact inversion at `d = 1`.
//! * [`epsilon_adjusted`] discounts `r` by the conformal confidence `1 − β`.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numfmt;

/// Bracket for the bisection in [`exact_epsilon`].
pub const EXACT_BRACKET: (f64, f64) = (1e-15, 1.0 - 1e-15);
/// Absolute tolerance of [`exact_epsilon`].
pub const EXACT_TOLERANCE: f64 = 1e-12;
const MAX_BISECTION_STEPS: usize = 200;

/// Terms this many nats below the running maximum no longer change the sum.
const LSE_CUTOFF: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// `1 − δ^{1/N}`.
    NoViolation,
    Chernoff,
    /// Chernoff with `r` discounted by `1 − β`.
    Adjusted,
    /// Bisection on the exact binomial condition.
    Exact,
}

/// A certified ε with the rule that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonBound {
    #[serde(serialize_with = "numfmt::f64")]
    pub value: f64,
    pub method: BoundMethod,
    /// The bound hit the `min{1, ·}` branch.
    pub clamped: bool,
}

impl EpsilonBound {
    fn clamp(raw: f64, method: BoundMethod) -> Self {
        if raw > 1.0 {
            Self {
                value: 1.0,
                method,
                clamped: true,
            }
        } else {
            Self {
                value: raw,
                method,
                clamped: false,
            }
        }
    }
}

/// Inputs to the bound family. `violations` is real-valued so that discounted
/// counts can be expressed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundQuery {
    pub n_samples: u64,
    pub violations: f64,
    pub dims: u64,
    pub delta: f64,
    pub beta: f64,
}

impl BoundQuery {
    pub fn new(n_samples: u64, violations: f64, delta: f64) -> Result<Self> {
        let q = Self {
            n_samples,
            violations,
            dims: 1,
            delta,
            beta: 0.0,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_dims(mut self, dims: u64) -> Result<Self> {
        self.dims = dims;
        self.validate()?;
        Ok(self)
    }

    pub fn with_beta(mut self, beta: f64) -> Result<Self> {
        self.beta = beta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_n(self.n_samples)?;
        check_delta(self.delta)?;
        check_beta(self.beta)?;
        check_violations(self.violations, self.n_samples)?;
        if self.dims == 0 {
            return Err(Error::Argument("dims must be at least 1".into()));
        }
        Ok(())
    }

    pub fn chernoff(&self) -> Result<EpsilonBound> {
        epsilon_chernoff(self.n_samples, self.violations, self.delta)
    }

    /// Chernoff bound on the `(1 − β)`-discounted violation count.
    pub fn adjusted(&self) -> Result<EpsilonBound> {
        let mut b = epsilon_chernoff(self.n_samples, self.violations * (1.0 - self.beta), self.delta)?;
        b.method = BoundMethod::Adjusted;
        Ok(b)
    }

    /// Exact inversion; requires an integral violation count.
    pub fn exact(&self) -> Result<EpsilonBound> {
        if self.violations.fract() != 0.0 {
            return Err(Error::Argument(format!(
                "exact bound needs an integer violation count, got {}",
                self.violations
            )));
        }
        exact_epsilon(self.n_samples, self.violations as u64, self.dims, self.delta)
    }
}

fn check_n(n: u64) -> Result<()> {
    if n == 0 {
        return Err(Error::Argument("sample count N must be at least 1".into()));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Argument(format!("beta must lie in [0, 1), got {beta}")));
    }
    Ok(())
}

fn check_violations(r: f64, n: u64) -> Result<()> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(Error::Argument(format!(
            "violation count must be finite and non-negative, got {r}"
        )));
    }
    if r > n as f64 {
        return Err(Error::Argument(format!(
            "violation count {r} exceeds sample count {n}"
        )));
    }
    Ok(())
}

/// Running `ln Σ exp(xᵢ)` that never exponentiates a positive number.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    max: f64,
    // Σ exp(xᵢ − max)
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
        }
    }

    pub fn add(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn value(&self) -> f64 {
        if self.scaled == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

/// `ln C(n, k)` via log-gamma.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    assert!(k <= n, "ln_choose: k = {k} > n = {n}");
    if k == 0 || k == n {
        return 0.0;
    }
    let (n, k) = (n as f64, k as f64);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// `ln P(Bin(n, ε) ≤ m)` for `ε ∈ (0, 1)`.
///
/// Summation starts at the largest term in `[0, m]` and walks outwards with the
/// exact term ratio. The terms are log-concave in `i`, so once a term falls
/// `LSE_CUTOFF` nats below the running maximum the rest of that side is
/// negligible.
pub fn ln_binomial_cdf(n: u64, m: u64, eps: f64) -> f64 {
    debug_assert!(eps > 0.0 && eps < 1.0);
    if m >= n {
        return 0.0;
    }
    let ln_p = eps.ln();
    let ln_q = (-eps).ln_1p();
    let ln_odds = ln_q - ln_p;

    let mode = (((n + 1) as f64) * eps).floor().min(n as f64) as u64;
    let start = mode.min(m);
    let ln_start =
        ln_choose(n, start) + start as f64 * ln_p + (n - start) as f64 * ln_q;

    let mut lse = LogSumExp::new();
    lse.add(ln_start);

    // t(i−1) / t(i) = i (1−ε) / ((n−i+1) ε)
    let (mut term, mut i) = (ln_start, start);
    while i > 0 {
        term += (i as f64 / (n - i + 1) as f64).ln() + ln_odds;
        i -= 1;
        lse.add(term);
        if term < lse.max() - LSE_CUTOFF {
            break;
        }
    }
    // t(i+1) / t(i) = (n−i) ε / ((i+1) (1−ε))
    let (mut term, mut i) = (ln_start, start);
    while i < m {
        term += ((n - i) as f64 / (i + 1) as f64).ln() - ln_odds;
        i += 1;
        lse.add(term);
        if term < lse.max() - LSE_CUTOFF {
            break;
        }
    }
    lse.value().min(0.0)
}

fn check_condition_args(n: u64, r: u64, d: u64) -> Result<u64> {
    check_n(n)?;
    if d == 0 {
        return Err(Error::Argument("number of optimization variables d must be at least 1".into()));
    }
    let m = r
        .checked_add(d - 1)
        .ok_or_else(|| Error::Argument("r + d − 1 overflows".into()))?;
    if m > n {
        return Err(Error::Argument(format!(
            "r + d − 1 = {m} exceeds the sample count N = {n}"
        )));
    }
    Ok(m)
}

/// Natural log of the left-hand side of the scenario condition.
pub fn ln_condition_lhs(n: u64, r: u64, d: u64, eps: f64) -> Result<f64> {
    let m = check_condition_args(n, r, d)?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Argument(format!(
            "eps must lie strictly inside (0, 1), got {eps} (degenerate Bernoulli)"
        )));
    }
    Ok(ln_choose(m, r) + ln_binomial_cdf(n, m, eps))
}

/// Whether `(N, r, d, ε)` satisfies the exact scenario condition at level δ.
pub fn binomial_condition_holds(n: u64, r: u64, d: u64, eps: f64, delta: f64) -> Result<bool> {
    check_delta(delta)?;
    Ok(ln_condition_lhs(n, r, d, eps)? <= delta.ln())
}

/// Smallest ε (to [`EXACT_TOLERANCE`]) satisfying the exact scenario condition.
/// Returns 1, clamped, when no ε below the upper bracket qualifies.
pub fn exact_epsilon(n: u64, r: u64, d: u64, delta: f64) -> Result<EpsilonBound> {
    check_delta(delta)?;
    check_condition_args(n, r, d)?;
    let ln_delta = delta.ln();
    let holds = |eps: f64| -> Result<bool> { Ok(ln_condition_lhs(n, r, d, eps)? <= ln_delta) };

    let (mut lo, mut hi) = EXACT_BRACKET;
    if !holds(hi)? {
        return Ok(EpsilonBound {
            value: 1.0,
            method: BoundMethod::Exact,
            clamped: true,
        });
    }
    if holds(lo)? {
        return Ok(EpsilonBound {
            value: lo,
            method: BoundMethod::Exact,
            clamped: false,
        });
    }
    for _ in 0..MAX_BISECTION_STEPS {
        if hi - lo <= EXACT_TOLERANCE {
            return Ok(EpsilonBound {
                value: hi,
                method: BoundMethod::Exact,
                clamped: false,
            });
        }
        let mid = 0.5 * (lo + hi);
        if holds(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Internal(format!(
        "bisection did not converge in {MAX_BISECTION_STEPS} steps (N = {n}, r = {r}, d = {d}, δ = {delta})"
    )))
}

/// `1 − δ^{1/N}`, evaluated as `−expm1(ln δ / N)`.
pub fn epsilon_no_violations(n: u64, delta: f64) -> Result<EpsilonBound> {
    check_n(n)?;
    check_delta(delta)?;
    Ok(EpsilonBound {
        value: -(delta.ln() / n as f64).exp_m1(),
        method: BoundMethod::NoViolation,
        clamped: false,
    })
}

/// `min{1, (r + L + √(L² + 2rL)) / N}` with `L = ln(1/δ)`.
pub fn epsilon_chernoff(n: u64, r: f64, delta: f64) -> Result<EpsilonBound> {
    check_n(n)?;
    check_delta(delta)?;
    check_violations(r, n)?;
    let l = -delta.ln();
    let raw = (r + l + (l * l + 2.0 * r * l).sqrt()) / n as f64;
    Ok(EpsilonBound::clamp(raw, BoundMethod::Chernoff))
}

/// [`epsilon_chernoff`] with `r` replaced by `r (1 − β)`.
pub fn epsilon_adjusted(n: u64, r: u64, delta: f64, beta: f64) -> Result<EpsilonBound> {
    epsilon_adjusted_real(n, r as f64, delta, beta)
}

/// [`epsilon_adjusted`] for a real-valued (for example expected) violation count.
pub fn epsilon_adjusted_real(n: u64, r: f64, delta: f64, beta: f64) -> Result<EpsilonBound> {
    check_beta(beta)?;
    check_violations(r, n)?;
    let mut b = epsilon_chernoff(n, r * (1.0 - beta), delta)?;
    b.method = BoundMethod::Adjusted;
    Ok(b)
}

/// Smallest `N` with `N ≥ (ln H + ln(1/δ)) / ε`.
pub fn pac_sample_complexity(eps: f64, delta: f64, ln_hypothesis_space: f64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Argument(format!("eps must lie in (0, 1), got {eps}")));
    }
    check_delta(delta)?;
    if !(ln_hypothesis_space.is_finite() && ln_hypothesis_space >= 0.0) {
        return Err(Error::Argument(format!(
            "ln of the hypothesis space size must be finite and non-negative, got {ln_hypothesis_space}"
        )));
    }
    let rhs = (ln_hypothesis_space - delta.ln()) / eps;
    // absorb rounding in ln/div so that an exactly integral bound is not pushed up by one
    let n = (rhs * (1.0 - 1e-12)).ceil().max(1.0);
    Ok(n as u64)
}
