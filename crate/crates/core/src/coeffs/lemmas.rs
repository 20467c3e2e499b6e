//! Grid-based checks of the monotonicity and smallness properties of the constants.

use super::{c1, c2, c4, c4_over_c2, c5, c5_over_c2, fb};
use crate::error::{ensure, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Upper end of every swept β range; the constants diverge at 1.
pub const BETA_CLIP: f64 = 1.0 - 1e-6;
/// Grid spacing for monotonicity classification.
pub const MONOTONE_STEP: f64 = 1e-4;
/// Successive differences must exceed this margin to count as strict.
pub const STRICT_MARGIN: f64 = 1e-12;
/// Grid spacing for the smallness sups.
pub const SMALLNESS_STEP: f64 = 1e-5;

/// Which one-parameter slice of `C_total` to sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepMode {
    /// β1 fixed, β2 swept over `[0.9, 1)`.
    FixBeta1(f64),
    /// β2 fixed, β1 swept over `[0.9, 1)`.
    FixBeta2(f64),
    /// β1 = β2 = β swept over `[0.5, 1)`.
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Increasing,
    Decreasing,
    ConvexInteriorMin,
    Mixed,
}

/// Points `lo, lo + step, …` up to and including `hi`.
fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step).floor() as usize;
    let mut xs: Vec<f64> = (0..=count)
        .map(|i| lo + i as f64 * step)
        .filter(|x| *x < hi)
        .collect();
    xs.push(hi);
    xs
}

fn c_total_raw(a: f64, b: f64, lambda: f64) -> f64 {
    fb(a, b) + (c1(a, b) + c2(a, b)) * lambda
}

/// Classifies `C_total` along the slice selected by `mode`.
///
/// Strictly monotone slices are `Increasing`/`Decreasing`; a slice whose first
/// differences change sign exactly once, from negative to positive, with all
/// second differences positive is `ConvexInteriorMin`; anything else is `Mixed`.
pub fn monotone_direction(mode: SweepMode, lambda: f64) -> Result<Direction> {
    ensure(lambda > 0.0, || {
        format!("lambda must be positive, got {lambda}")
    })?;
    let (lo, eval): (f64, Box<dyn Fn(f64) -> f64 + Sync>) = match mode {
        SweepMode::FixBeta1(a) => (0.9, Box::new(move |x| c_total_raw(a, x, lambda))),
        SweepMode::FixBeta2(b) => (0.9, Box::new(move |x| c_total_raw(x, b, lambda))),
        SweepMode::Diagonal => (0.5, Box::new(move |x| c_total_raw(x, x, lambda))),
    };
    let ys: Vec<f64> = grid(lo, BETA_CLIP, MONOTONE_STEP)
        .par_iter()
        .map(|&x| eval(x))
        .collect();
    Ok(classify(&ys))
}

fn classify(ys: &[f64]) -> Direction {
    let d1: Vec<f64> = ys.windows(2).map(|w| w[1] - w[0]).collect();
    if d1.iter().all(|d| *d > STRICT_MARGIN) {
        return Direction::Increasing;
    }
    if d1.iter().all(|d| *d < -STRICT_MARGIN) {
        return Direction::Decreasing;
    }
    let convex = d1.windows(2).all(|w| w[1] - w[0] > 0.0);
    let changes = d1
        .windows(2)
        .filter(|w| (w[0] < 0.0) != (w[1] < 0.0))
        .count();
    if convex && changes == 1 && d1[0] < 0.0 && *d1.last().expect("nonempty grid") > 0.0 {
        Direction::ConvexInteriorMin
    } else {
        Direction::Mixed
    }
}

/// One of the six ratios bounded by the smallness lemma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmallnessRatio {
    /// `|C4/C1|` at β1 = 0.9, β2 swept.
    C4OverC1Beta1Fixed,
    /// `|C5/C1|` at β1 = 0.9, β2 swept.
    C5OverC1Beta1Fixed,
    /// `|C4/C2|` at β1 = 0.99, β2 swept.
    C4OverC2Beta1Fixed,
    /// `|C5/C2|` at β1 = 0.99, β2 swept.
    C5OverC2Beta1Fixed,
    /// `|C4/C2|` at β2 = 0.999, β1 swept.
    C4OverC2Beta2Fixed,
    /// `|C5/C2|` at β2 = 0.999, β1 swept.
    C5OverC2Beta2Fixed,
}

impl SmallnessRatio {
    pub const ALL: [SmallnessRatio; 6] = [
        SmallnessRatio::C4OverC1Beta1Fixed,
        SmallnessRatio::C5OverC1Beta1Fixed,
        SmallnessRatio::C4OverC2Beta1Fixed,
        SmallnessRatio::C5OverC2Beta1Fixed,
        SmallnessRatio::C4OverC2Beta2Fixed,
        SmallnessRatio::C5OverC2Beta2Fixed,
    ];

    /// The stated bound on the sup of the ratio.
    pub fn bound(self) -> f64 {
        match self {
            SmallnessRatio::C4OverC1Beta1Fixed => 3e-4,
            SmallnessRatio::C5OverC1Beta1Fixed => 4e-3,
            SmallnessRatio::C4OverC2Beta1Fixed => 1e-3,
            SmallnessRatio::C5OverC2Beta1Fixed => 6e-3,
            SmallnessRatio::C4OverC2Beta2Fixed => 6e-5,
            SmallnessRatio::C5OverC2Beta2Fixed => 5e-4,
        }
    }

    /// `(β1, β2)` for sweep coordinate `x`.
    fn point(self, x: f64) -> (f64, f64) {
        match self {
            SmallnessRatio::C4OverC1Beta1Fixed | SmallnessRatio::C5OverC1Beta1Fixed => (0.9, x),
            SmallnessRatio::C4OverC2Beta1Fixed | SmallnessRatio::C5OverC2Beta1Fixed => (0.99, x),
            SmallnessRatio::C4OverC2Beta2Fixed | SmallnessRatio::C5OverC2Beta2Fixed => (x, 0.999),
        }
    }
}

/// `|ratio|` at `(β1, β2)`; the C2 ratios use forms with `(β1 − β2)` cancelled
/// so the removable singularity on the diagonal evaluates to its limit.
pub fn smallness_ratio(ratio: SmallnessRatio, beta1: f64, beta2: f64) -> f64 {
    let (a, b) = (beta1, beta2);
    match ratio {
        SmallnessRatio::C4OverC1Beta1Fixed => (c4(a, b) / c1(a, b)).abs(),
        SmallnessRatio::C5OverC1Beta1Fixed => (c5(a, b) / c1(a, b)).abs(),
        SmallnessRatio::C4OverC2Beta1Fixed | SmallnessRatio::C4OverC2Beta2Fixed => {
            c4_over_c2(a, b).abs()
        }
        SmallnessRatio::C5OverC2Beta1Fixed | SmallnessRatio::C5OverC2Beta2Fixed => {
            c5_over_c2(a, b).abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallnessEntry {
    pub ratio: SmallnessRatio,
    pub sup: f64,
    /// Swept β value attaining the sup.
    pub argmax: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallnessReport {
    pub step: f64,
    pub entries: Vec<SmallnessEntry>,
}

impl SmallnessReport {
    pub fn all_hold(&self) -> bool {
        self.entries.iter().all(|e| e.holds)
    }
}

/// Sups of the six ratios over `[0.9, 1 − 1e−6]` with grid step `1e−5`.
pub fn verify_smallness_lemma() -> SmallnessReport {
    let xs = grid(0.9, BETA_CLIP, SMALLNESS_STEP);
    let entries = SmallnessRatio::ALL
        .iter()
        .map(|&ratio| {
            let (sup, argmax) = xs
                .par_chunks(4096)
                .map(|chunk| {
                    chunk
                        .iter()
                        .fold((f64::NEG_INFINITY, f64::NAN), |best, &x| {
                            let (a, b) = ratio.point(x);
                            let r = smallness_ratio(ratio, a, b);
                            // NaN never wins a comparison; report it as an infinite sup instead.
                            let r = if r.is_nan() { f64::INFINITY } else { r };
                            if r > best.0 {
                                (r, x)
                            } else {
                                best
                            }
                        })
                })
                .collect::<Vec<_>>()
                .into_iter()
                .fold((f64::NEG_INFINITY, f64::NAN), |best, c| {
                    if c.0 > best.0 {
                        c
                    } else {
                        best
                    }
                });
            SmallnessEntry {
                ratio,
                sup,
                argmax,
                bound: ratio.bound(),
                holds: sup < ratio.bound(),
            }
        })
        .collect();
    SmallnessReport {
        step: SMALLNESS_STEP,
        entries,
    }
}
