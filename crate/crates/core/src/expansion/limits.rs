//! Large-horizon expectations of `L/R` and `M P / R³`, one coefficient per
//! moment shape.
//!
//! The `M P / R³` polynomials are written in `ρ` and `β`; they are read as
//! `ρ = β2`, `β = β1`, and the differences of the two sets reproduce the
//! constants C1..C5 and the FB coefficient.

use crate::coeffs::BetaPair;
use serde::{Deserialize, Serialize};

/// Coefficients multiplying the zero-noise term and the five moment shapes.
///
/// Shape `k` of `mbn` matches the moment appearing in MBN(k+1):
/// `G/|g_j|³ E d_j²`, `(1/|g_j|) Σ_i g_ij s_i/g_i² E d_i²`,
/// `s_j/g_j² Σ_i s_i E d_ij d_j`, `(1/|g_j|) Σ_i E d_ij d_i / |g_i|`,
/// `s_j/g_j² Σ_i g_ij/|g_i| E d_i d_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeCoefficients {
    pub fb: f64,
    pub mbn: [f64; 5],
}

pub fn l_over_r_limits(betas: BetaPair) -> ShapeCoefficients {
    let (a, b) = (betas.beta1, betas.beta2);
    let ab = 1.0 - a * b;
    ShapeCoefficients {
        fb: a / (1.0 - a),
        mbn: [
            a * (1.0 - 2.0 * b) / ((1.0 - a) * (1.0 + b)),
            a * (a * b * b - a * b + a + b * b - 2.0 * b) / ((1.0 - a) * (1.0 + b) * ab),
            -a * b * (1.0 - a) * (1.0 - b) / (ab * ab),
            a * (b - a) / ((1.0 + a) * ab),
            -a * b * (b - a) * (1.0 - b) / ((1.0 + b) * ab * ab),
        ],
    }
}

pub fn mp_over_r3_limits(betas: BetaPair) -> ShapeCoefficients {
    let (be, r) = (betas.beta1, betas.beta2);
    let br = 1.0 - be * r;
    let (b2, r2, r3, r4, r5) = (be * be, r * r, r.powi(3), r.powi(4), r.powi(5));
    let jj = -(4.0 * b2 * r5 + 2.0 * be * r5 + 3.0 * b2 * r4
        - 6.0 * be * r4
        - 3.0 * r4
        - 5.0 * b2 * r3
        - 10.0 * be * r3
        + 3.0 * r3
        + 3.0 * b2 * r2
        + 6.0 * be * r2
        + 9.0 * r2
        + b2 * r
        - 4.0 * be * r
        - 3.0 * r)
        / ((1.0 - r) * (1.0 + r).powi(2) * br * br);
    let cross =
        r * (r - be) * (b2 * (r2 - 3.0 * r - 1.0) + be * (3.0 * r2 - r + 2.0) + 1.0 - 2.0 * r)
            / ((1.0 + be) * (1.0 + r).powi(2) * br * br);
    let hess_j = (3.0 * b2 * r5 - b2 * r4 + 3.0 * b2 * r3 - b2 * r + be * r5
        - 8.0 * be * r4
        - 2.0 * be * r2
        + be * r
        + 4.0 * r3
        - r2
        + r)
        / ((1.0 - r) * (1.0 + r).powi(2) * br * br);
    let sq = r * (be * r2 - be * r + be + r2 - 2.0 * r) / ((1.0 + r) * (1.0 - r) * br);
    let hess_i = r * (r - be) / ((1.0 + r) * br);
    ShapeCoefficients {
        fb: r / (1.0 - r),
        mbn: [jj, sq, hess_j, hess_i, cross],
    }
}
