//! Simple noise scale, the regime ratio λ and the β rule of thumb.
//!
//! `B_simple = tr Σ / ‖g‖²` and `λ = ((N/b − 1)/(N − 1)) B_simple`. Above
//! `λ = 1` the small-batch behaviour holds, below `λ = 0.5` the large-batch
//! behaviour; in between no monotonicity statement is made.

use crate::error::{ensure, Error, Result};
use crate::optim::Trajectory;
use crate::problem::PerSampleProblem;
use crate::Vector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Gradient norms below this leave `B_simple` undefined.
pub const MIN_GRAD_NORM: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScaleMethod {
    /// Every per-sample gradient is used.
    ExactPerSample,
    /// A subset of `samples` per-sample gradients drawn without replacement.
    SampledGradients { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseScaleEstimate {
    pub b_simple: f64,
    pub at_point: Vector,
    pub method: NoiseScaleMethod,
    pub trace_sigma: f64,
    pub grad_norm_sq: f64,
}

fn estimate(
    grads: &[&Vector],
    theta: &Vector,
    method: NoiseScaleMethod,
) -> Result<NoiseScaleEstimate> {
    let n = grads.len() as f64;
    let mut mean = Vector::zeros(theta.len());
    for g in grads {
        mean += *g;
    }
    mean /= n;
    let trace_sigma = grads
        .iter()
        .map(|g| (*g - &mean).norm_squared())
        .sum::<f64>()
        / n;
    let grad_norm_sq = mean.norm_squared();
    if grad_norm_sq.sqrt() <= MIN_GRAD_NORM {
        return Err(Error::VanishingGradient {
            norm: grad_norm_sq.sqrt(),
        });
    }
    Ok(NoiseScaleEstimate {
        b_simple: trace_sigma / grad_norm_sq,
        at_point: theta.clone(),
        method,
        trace_sigma,
        grad_norm_sq,
    })
}

/// `tr Σ / ‖g‖²` from all per-sample gradients.
pub fn b_simple<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
) -> Result<NoiseScaleEstimate> {
    crate::problem::check_theta(problem, theta)?;
    let grads: Vec<Vector> = (0..problem.n_samples())
        .map(|p| problem.per_sample_grad(p, theta))
        .collect();
    let refs: Vec<&Vector> = grads.iter().collect();
    estimate(&refs, theta, NoiseScaleMethod::ExactPerSample)
}

/// `B_simple` from a random subset of per-sample gradients.
pub fn b_simple_sampled<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    samples: usize,
    seed: u64,
) -> Result<NoiseScaleEstimate> {
    let n = problem.n_samples();
    ensure(samples >= 2 && samples <= n, || {
        format!("subset size {samples} must lie in [2, {n}]")
    })?;
    crate::problem::check_theta(problem, theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grads: Vec<Vector> = sample(&mut rng, n, samples)
        .into_iter()
        .map(|p| problem.per_sample_grad(p, theta))
        .collect();
    let refs: Vec<&Vector> = grads.iter().collect();
    estimate(
        &refs,
        theta,
        NoiseScaleMethod::SampledGradients { samples, seed },
    )
}

/// `((N/b − 1)/(N − 1)) · B`.
pub fn lambda_ratio(n: usize, b: usize, b_simple: f64) -> Result<f64> {
    ensure(n >= 2, || format!("N = {n} must be at least 2"))?;
    ensure(b >= 1 && b <= n, || {
        format!("batch size {b} must lie in [1, {n}]")
    })?;
    ensure(b_simple >= 0.0 && b_simple.is_finite(), || {
        format!("B_simple = {b_simple} must be finite and nonnegative")
    })?;
    let (n, b) = (n as f64, b as f64);
    Ok((n / b - 1.0) / (n - 1.0) * b_simple)
}

/// Batch sizes where `λ = 1` and `λ = 0.5`: `N·B/(N+B−1)` and `2N·B/(N+2B−1)`.
pub fn batch_thresholds(n: usize, b_simple: f64) -> Result<(f64, f64)> {
    ensure(n >= 2, || format!("N = {n} must be at least 2"))?;
    ensure(b_simple >= 0.0 && b_simple.is_finite(), || {
        format!("B_simple = {b_simple} must be finite and nonnegative")
    })?;
    let n = n as f64;
    Ok((
        n * b_simple / (n + b_simple - 1.0),
        2.0 * n * b_simple / (n + 2.0 * b_simple - 1.0),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    SmallBatch,
    Transition,
    LargeBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeAdvice {
    pub n: usize,
    pub batch_size: usize,
    pub b_simple: f64,
    pub lambda: f64,
    pub small_batch_threshold: f64,
    pub large_batch_threshold: f64,
    pub regime: Regime,
    /// Suggested `(β1, β2)`; absent in the transition band.
    pub suggested_betas: Option<(f64, f64)>,
    pub recommendation: String,
}

pub fn recommend(n: usize, b: usize, b_simple: f64) -> Result<RegimeAdvice> {
    let lambda = lambda_ratio(n, b, b_simple)?;
    let (small, large) = batch_thresholds(n, b_simple)?;
    let (regime, suggested_betas, recommendation) = if lambda > 1.0 {
        (
            Regime::SmallBatch,
            Some((0.9, 0.999)),
            format!(
                "small-batch regime (lambda = {lambda:.4} > 1): keep beta1 = 0.9, beta2 = 0.999"
            ),
        )
    } else if lambda < 0.5 {
        (
            Regime::LargeBatch,
            Some((0.999, 0.999)),
            format!(
                "large-batch regime (lambda = {lambda:.4} < 0.5): take beta1 = beta2 as high as training stays stable, e.g. 0.999"
            ),
        )
    } else {
        (
            Regime::Transition,
            None,
            format!(
                "transition band (0.5 <= lambda = {lambda:.4} <= 1): batch size lies between {small:.2} and {large:.2}; no direction is implied"
            ),
        )
    };
    Ok(RegimeAdvice {
        n,
        batch_size: b,
        b_simple,
        lambda,
        small_batch_threshold: small,
        large_batch_threshold: large,
        regime,
        suggested_betas,
        recommendation,
    })
}

/// One point of a noise-scale trace; `estimate` is `None` where the gradient
/// vanishes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub estimate: Option<NoiseScaleEstimate>,
    pub flagged: bool,
}

/// `B_simple` at every `every`-th point of a trajectory.
pub fn b_simple_trace<P: PerSampleProblem + ?Sized>(
    problem: &P,
    trajectory: &Trajectory,
    every: usize,
) -> Result<Vec<TraceEntry>> {
    ensure(every >= 1, || "stride must be at least 1".into())?;
    let indices: Vec<usize> = (0..trajectory.points.len()).step_by(every).collect();
    indices
        .par_iter()
        .map(
            |&index| match b_simple(problem, &trajectory.points[index]) {
                Ok(e) => Ok(TraceEntry {
                    index,
                    estimate: Some(e),
                    flagged: false,
                }),
                Err(Error::VanishingGradient { .. }) => Ok(TraceEntry {
                    index,
                    estimate: None,
                    flagged: true,
                }),
                Err(e) => Err(e),
            },
        )
        .collect()
}
