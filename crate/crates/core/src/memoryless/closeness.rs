//! Trajectory closeness between the mini-batch optimizer and its memoryless
//! approximation, as a function of the step size.

use super::run_memoryless;
use crate::error::{ensure, Result};
use crate::optim::{run_epoch, Algorithm, HyperParams};
use crate::problem::{check_theta, replicate, PartitionSpec, PerSampleProblem, Replicated};
use crate::stats::loglog_slope;
use crate::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One step size of a closeness study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessRun {
    pub eta: f64,
    pub steps: usize,
    /// `‖θ_t − θ̃_t‖_∞` for `t = 0..=steps`.
    pub per_step_errors: Vec<f64>,
    pub max_inf_error: f64,
    /// Set when either iteration produced a non-finite or huge iterate.
    pub divergence: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosenessReport {
    pub algorithm: Algorithm,
    pub horizon: f64,
    pub eta_ladder: Vec<f64>,
    pub runs: Vec<ClosenessRun>,
    /// Slope of `log max_error` against `log η`; `None` if a run diverged or
    /// an error was exactly zero.
    pub fitted_exponent: Option<f64>,
}

impl ClosenessReport {
    pub fn max_errors(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.max_inf_error).collect()
    }

    pub fn any_divergent(&self) -> bool {
        self.runs.iter().any(|r| r.divergence.is_some())
    }

    /// `η,max_error` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,max_error\n");
        for r in &self.runs {
            out.push_str(&format!("{},{}\n", r.eta, r.max_inf_error));
        }
        out
    }
}

/// Repeats the samples `copies` times and the epoch's batch order with them,
/// so batch `k + c·m` of the long epoch is batch `k` of the original.
pub fn replicate_epoch<P: PerSampleProblem>(
    problem: P,
    partition: &PartitionSpec,
    copies: usize,
) -> Result<(Replicated<P>, PartitionSpec)> {
    let n = problem.n_samples();
    let perm: Vec<usize> = (0..copies)
        .flat_map(|c| partition.perm().iter().map(move |p| p + c * n))
        .collect();
    let long = PartitionSpec::new(partition.m() * copies, partition.b(), perm)?;
    Ok((replicate(problem, copies)?, long))
}

/// Runs both iterations for `⌊horizon/η⌋` steps at every `η` of the ladder.
///
/// When an epoch has fewer batches than steps, the sample set is replicated
/// so that the whole horizon fits in one epoch.
pub fn closeness_scaling<P: PerSampleProblem>(
    problem: &P,
    partition: &PartitionSpec,
    hp_base: &HyperParams,
    theta0: &Vector,
    algo: Algorithm,
    eta_ladder: &[f64],
    horizon: f64,
) -> Result<ClosenessReport> {
    ensure(eta_ladder.len() >= 3, || {
        "the step-size ladder needs at least three entries".into()
    })?;
    ensure(
        eta_ladder.windows(2).all(|w| w[1] < w[0]) && eta_ladder.iter().all(|e| *e > 0.0),
        || "the step-size ladder must be positive and strictly decreasing".into(),
    )?;
    ensure(horizon > 0.0 && horizon.is_finite(), || {
        "horizon must be positive".into()
    })?;
    check_theta(problem, theta0)?;
    partition.check_against(problem)?;
    hp_base.validate()?;

    let runs: Vec<ClosenessRun> = eta_ladder
        .par_iter()
        .map(|&eta| -> Result<ClosenessRun> {
            let steps = ((horizon / eta) * (1.0 + 1e-12)).floor() as usize;
            let copies = steps.div_ceil(partition.m()).max(1);
            let (long_problem, long_part) = replicate_epoch(problem, partition, copies)?;
            let hp = hp_base.with_eta(eta);
            let outcome =
                run_epoch(&long_problem, &long_part, &hp, theta0, algo, steps).and_then(|exact| {
                    run_memoryless(&long_problem, &long_part, &hp, theta0, algo, steps)
                        .map(|approx| (exact, approx))
                });
            Ok(match outcome {
                Ok((exact, approx)) => {
                    let errs: Vec<f64> = exact
                        .points
                        .iter()
                        .zip(&approx.points)
                        .map(|(a, b)| (a - b).amax())
                        .collect();
                    let blown = exact
                        .points
                        .iter()
                        .flatten()
                        .any(|x| !x.is_finite() || x.abs() > super::DIVERGENCE_CUTOFF);
                    let max = errs.iter().cloned().fold(0.0, f64::max);
                    ClosenessRun {
                        eta,
                        steps,
                        max_inf_error: max,
                        per_step_errors: errs,
                        divergence: blown.then(|| {
                            "mini-batch iterate exceeded the divergence cutoff".to_string()
                        }),
                    }
                }
                Err(e) => ClosenessRun {
                    eta,
                    steps,
                    per_step_errors: Vec::new(),
                    max_inf_error: f64::INFINITY,
                    divergence: Some(e.to_string()),
                },
            })
        })
        .collect::<Result<_>>()?;

    let fitted_exponent = if runs.iter().any(|r| r.divergence.is_some()) {
        None
    } else {
        loglog_slope(
            eta_ladder,
            &runs.iter().map(|r| r.max_inf_error).collect::<Vec<_>>(),
        )
    };
    Ok(ClosenessReport {
        algorithm: algo,
        horizon,
        eta_ladder: eta_ladder.to_vec(),
        runs,
        fitted_exponent,
    })
}
