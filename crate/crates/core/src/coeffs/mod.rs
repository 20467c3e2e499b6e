//! Adam averaging weights, the correction constants C1–C5 and `C_total`.
//!
//! With `a = β1`, `b = β2` the full-batch coefficient is
//! `FB = a/(1−a) − b/(1−b)` and `C_total(λ) = FB + (C1 + C2) λ`.

mod lemmas;
mod series;

pub use lemmas::{
    monotone_direction, smallness_ratio, verify_smallness_lemma, Direction, SmallnessEntry,
    SmallnessRatio, SmallnessReport, SweepMode,
};
pub use series::{
    constants_from_limits, constants_from_series, series_partial_and_limit, SeriesId,
};

use crate::error::{ensure, Error, Result};
use serde::{Deserialize, Serialize};

/// Betas at or above `1 − BETA_GUARD` are rejected by [`constants`]: every
/// constant diverges as a beta approaches one.
pub const BETA_GUARD: f64 = 1e-9;

/// Adam momentum pair `(β1, β2)`, both in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPair {
    pub beta1: f64,
    pub beta2: f64,
}

impl BetaPair {
    pub fn new(beta1: f64, beta2: f64) -> Result<Self> {
        let unit = |x: f64| (0.0..1.0).contains(&x);
        ensure(unit(beta1) && unit(beta2), || {
            format!("betas must lie in [0, 1), got ({beta1}, {beta2})")
        })?;
        Ok(Self { beta1, beta2 })
    }
}

/// `β^{t−k}(1−β)/(1−β^{t+1})`, the bias-corrected exponential weight of step `k` seen from step `t`.
pub fn ema_weight(beta: f64, t: usize, k: usize) -> f64 {
    debug_assert!(k <= t);
    beta.powi((t - k) as i32) * (1.0 - beta) / (1.0 - beta.powi(t as i32 + 1))
}

/// The weights `(μ_{t,k}, ν_{t,k})`.
pub fn mu_nu(t: usize, k: usize, betas: BetaPair) -> Result<(f64, f64)> {
    if k > t {
        return Err(Error::OutOfRange {
            index: k,
            limit: t + 1,
        });
    }
    Ok((ema_weight(betas.beta1, t, k), ema_weight(betas.beta2, t, k)))
}

/// All weights `w_{t,0}, …, w_{t,t}` for one beta.
pub fn ema_weights(beta: f64, t: usize) -> Vec<f64> {
    (0..=t).map(|k| ema_weight(beta, t, k)).collect()
}

/// The constants of the expected correction at one `(β1, β2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub betas: BetaPair,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub fb: f64,
}

impl CoefficientSet {
    /// `FB + (C1 + C2) λ`.
    pub fn c_total_at(&self, lambda: f64) -> f64 {
        self.fb + (self.c1 + self.c2) * lambda
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.c1, self.c2, self.c3, self.c4, self.c5]
    }
}

/// Evaluates C1–C5 and FB in closed form.
pub fn constants(betas: BetaPair) -> Result<CoefficientSet> {
    let (a, b) = (betas.beta1, betas.beta2);
    ensure(a < 1.0 - BETA_GUARD && b < 1.0 - BETA_GUARD, || {
        format!("betas ({a}, {b}) are too close to 1 (guard {BETA_GUARD:e})")
    })?;
    Ok(CoefficientSet {
        betas,
        c1: c1(a, b),
        c2: c2(a, b),
        c3: c3(a, b),
        c4: c4(a, b),
        c5: c5(a, b),
        fb: fb(a, b),
    })
}

/// `FB + (C1 + C2) λ` at the given betas.
pub fn c_total(betas: BetaPair, lambda: f64) -> Result<f64> {
    ensure(lambda >= 0.0, || {
        format!("lambda must be ≥ 0, got {lambda}")
    })?;
    Ok(constants(betas)?.c_total_at(lambda))
}

pub(crate) fn fb(a: f64, b: f64) -> f64 {
    a / (1.0 - a) - b / (1.0 - b)
}

pub(crate) fn c1(a: f64, b: f64) -> f64 {
    // The three terms carrying 1/β1 are combined over a common denominator so
    // the β1 → 0 limit is finite; the sum is algebraically unchanged.
    let inv_a_group = (a.powi(3) * b - a * a * b + 2.0 * a * b * b - a * b - 2.0 * a - 3.0 * b
        + 4.0)
        / ((a - 1.0) * (a * b - 1.0).powi(2));
    inv_a_group
        + 3.0 * (1.0 + a) / (2.0 * (1.0 - a) * (1.0 + b))
        + 3.0 / (2.0 - 2.0 * b)
        + 3.0 / (1.0 + b).powi(2)
        - 2.0
}

/// `C2 = (β1 − β2) · c2_core`.
fn c2_core(a: f64, b: f64) -> f64 {
    (a * b * b - a * b + a + b * b - 2.0 * b) / ((1.0 - a) * (1.0 - b) * (1.0 + b) * (1.0 - a * b))
}

pub(crate) fn c2(a: f64, b: f64) -> f64 {
    (a - b) * c2_core(a, b)
}

pub(crate) fn c3(a: f64, b: f64) -> f64 {
    let num = -2.0 * a * a * b.powi(5)
        + (a * a + 8.0 * a) * b.powi(4)
        + (-5.0 * a * a + 2.0 * a - 4.0) * b.powi(3)
        + (2.0 * a * a - 2.0 * a - 1.0) * b
        - 2.0 * a * b.powi(5)
        + (2.0 * a + 1.0) * b * b;
    num / ((1.0 - b) * (1.0 + b).powi(2) * (1.0 - a * b).powi(2))
}

pub(crate) fn c4(a: f64, b: f64) -> f64 {
    -(a - b).powi(2) / ((1.0 + a) * (1.0 + b) * (1.0 - a * b))
}

pub(crate) fn c5(a: f64, b: f64) -> f64 {
    b * (b - a) * (2.0 * b - 3.0 * a - 1.0) / ((1.0 + a) * (1.0 + b).powi(2) * (1.0 - a * b))
}

/// `C4/C2` with the common factor `(β1 − β2)` cancelled, finite on the diagonal.
pub(crate) fn c4_over_c2(a: f64, b: f64) -> f64 {
    -(a - b) / ((1.0 + a) * (1.0 + b) * (1.0 - a * b) * c2_core(a, b))
}

/// `C5/C2` with the common factor `(β1 − β2)` cancelled, finite on the diagonal.
pub(crate) fn c5_over_c2(a: f64, b: f64) -> f64 {
    -b * (2.0 * b - 3.0 * a - 1.0) / ((1.0 + a) * (1.0 + b).powi(2) * (1.0 - a * b) * c2_core(a, b))
}
