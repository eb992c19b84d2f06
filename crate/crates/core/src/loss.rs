//! The Cobb-Douglas loss family `|F - B|^p * B^q` and its variants.
//!
//! All functions here are pure. `F` is the compared (future) value and `B`
//! the base value; both must be strictly positive. The loss is ordinal: only
//! the ranking it induces matters, which is what makes the Lie
//! normalization below legitimate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default base exponent for a first pass over new data.
pub const DEFAULT_Q: f64 = -0.5;

/// Step the analyst usually starts with when re-tuning `q`.
pub const DEFAULT_Q_STEP: f64 = 0.1;

/// Exponents of the loss `|F - B|^p * B^q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub p: f64,
    pub q: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { p: 1.0, q: DEFAULT_Q }
    }
}

impl LossParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        let params = LossParams { p, q };
        params.validate()?;
        Ok(params)
    }

    pub fn with_q(q: f64) -> Result<Self> {
        Self::new(1.0, q)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0) || !self.p.is_finite() {
            return Err(Error::param(format!("p must be positive, got {}", self.p)));
        }
        if !self.q.is_finite() {
            return Err(Error::param(format!("q must be finite, got {}", self.q)));
        }
        Ok(())
    }

    /// Returns a warning when the normalized exponent `q/p` is outside
    /// `(-1, 0)`.
    ///
    /// Below -1 a fixed relative change loses weight as `B` grows; at or above
    /// 0 the loss no longer falls in `B`. Both are allowed for exploration.
    pub fn q_warning(&self) -> Option<String> {
        let q = self.q / self.p;
        if q <= -1.0 {
            Some(format!(
                "q/p = {q} <= -1: loss no longer rises in B at a fixed relative difference"
            ))
        } else if q >= 0.0 {
            Some(format!(
                "q/p = {q} >= 0: loss does not decrease in B for a fixed difference"
            ))
        } else {
            None
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositive(format!("{name} = {v}")))
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow(what.to_string()))
    }
}

/// Unsigned loss `|F - B|^p * B^q`.
pub fn eval_unsigned(f: f64, b: f64, params: LossParams) -> Result<f64> {
    check_positive("F", f)?;
    check_positive("B", b)?;
    params.validate()?;
    let diff = (f - b).abs();
    if diff == 0.0 {
        return Ok(0.0);
    }
    let diff_term = if params.p == 1.0 { diff } else { diff.powf(params.p) };
    finite(diff_term * b.powf(params.q), "unsigned loss")
}

/// Signed loss `(F - B) * B^q`.
pub fn eval_signed(f: f64, b: f64, q: f64) -> Result<f64> {
    check_positive("F", f)?;
    check_positive("B", b)?;
    let diff = f - b;
    if diff == 0.0 {
        return Ok(0.0);
    }
    finite(diff * b.powf(q), "signed loss")
}

/// Exponent of `B` in the time-invariant loss, `tq + t - 1`.
///
/// Written as `tq - (1 - t)` so that `t = 1` yields `q` bit-for-bit.
pub fn time_invariant_exponent(q: f64, t: f64) -> f64 {
    t * q - (1.0 - t)
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("t must lie in (0, 1], got {t}")))
    }
}

/// Time-invariant loss `|F - B| * B^(tq + t - 1)` for rescaled elapsed time `t`.
pub fn eval_time_invariant(f: f64, b: f64, q: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    eval_unsigned(
        f,
        b,
        LossParams {
            p: 1.0,
            q: time_invariant_exponent(q, t),
        },
    )
}

/// Signed time-invariant loss `(F - B) * B^(tq + t - 1)`.
pub fn eval_signed_time_invariant(f: f64, b: f64, q: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    eval_signed(f, b, time_invariant_exponent(q, t))
}

/// Parameters normalized to `p = 1` together with the matching critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRule {
    pub p: f64,
    pub q: f64,
    pub critical: f64,
}

/// Raise the loss and its critical value to the power `m`.
///
/// Maps `(p, q, C)` to `(mp, mq, C^m)`. The ranking and the flag set
/// `{L > C}` are unchanged.
pub fn lie_transform(p: f64, q: f64, critical: f64, m: f64) -> Result<NormalizedRule> {
    check_positive("p", p)?;
    check_positive("C", critical)?;
    check_positive("m", m)?;
    Ok(NormalizedRule {
        p: m * p,
        q: m * q,
        critical: finite(critical.powf(m), "C^m")?,
    })
}

/// Normalize `(p, q, C)` to `(1, q/p, C^(1/p))`.
pub fn lie_normalize(p: f64, q: f64, critical: f64) -> Result<NormalizedRule> {
    check_positive("p", p)?;
    check_positive("C", critical)?;
    if p == 1.0 {
        return Ok(NormalizedRule { p, q, critical });
    }
    Ok(NormalizedRule {
        p: 1.0,
        q: q / p,
        critical: finite(critical.powf(1.0 / p), "C^(1/p)")?,
    })
}

/// Base exponent equivalent to `|F - B|^r * (|F - B| / B)^s`, i.e. `-s / (r + s)`.
pub fn product_form_q(r: f64, s: f64) -> Result<f64> {
    check_positive("r", r)?;
    check_positive("s", s)?;
    Ok(-s / (r + s))
}

/// Starting value `log(range)/25 - 1` suggested for the first tuning pass.
///
/// The heuristic is not scale-invariant: rescaling the data changes the
/// suggestion. Treat it as advisory, and prefer it for count data.
pub fn bryan_initial_q(range: f64, log_base: f64) -> Result<f64> {
    check_positive("range", range)?;
    if !(log_base > 1.0) || !log_base.is_finite() {
        return Err(Error::param(format!("log base must exceed 1, got {log_base}")));
    }
    let log = if log_base == 10.0 {
        range.log10()
    } else if log_base == std::f64::consts::E {
        range.ln()
    } else {
        range.ln() / log_base.ln()
    };
    Ok(log / 25.0 - 1.0)
}
