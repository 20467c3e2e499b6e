//! Desk-scale β-sweep: multi-epoch mini-batch Adam on a synthetic task with a
//! held-out split, tracking the best validation loss per run.
//!
//! Every run reshuffles the training set each epoch. Runs that blow up are
//! kept with `diverged = true` and their best loss before the blow-up.

use crate::advisor::{lambda_ratio, MIN_GRAD_NORM};
use crate::error::{ensure, Result};
use crate::optim::{adam_step, batch_gradient, AdamState, HyperParams};
use crate::problem::{
    Logistic2D, PartitionSpec, PerSampleProblem, TeacherStudentConfig, TeacherStudentMlp,
};
use crate::stats::fit_slope;
use crate::Vector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Parameter magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SweepTask {
    TeacherStudent(TeacherStudentConfig),
    #[serde(rename = "logistic-2d")]
    Logistic2D {
        n_train: usize,
        n_val: usize,
        data_seed: u64,
    },
}

impl Default for SweepTask {
    fn default() -> Self {
        SweepTask::TeacherStudent(TeacherStudentConfig::default())
    }
}

/// Which β is varied; the other one is held fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "vary", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SweepAxis {
    Beta2 { beta1: f64, values: Vec<f64> },
    Beta1 { beta2: f64, values: Vec<f64> },
}

impl SweepAxis {
    fn pairs(&self) -> Vec<(f64, f64)> {
        match self {
            SweepAxis::Beta2 { beta1, values } => values.iter().map(|&b2| (*beta1, b2)).collect(),
            SweepAxis::Beta1 { beta2, values } => values.iter().map(|&b1| (b1, *beta2)).collect(),
        }
    }

    fn varied(&self, beta1: f64, beta2: f64) -> f64 {
        match self {
            SweepAxis::Beta2 { .. } => beta2,
            SweepAxis::Beta1 { .. } => beta1,
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            SweepAxis::Beta2 { values, .. } | SweepAxis::Beta1 { values, .. } => values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub task: SweepTask,
    pub axis: SweepAxis,
    pub batch_sizes: Vec<usize>,
    pub eta: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            task: SweepTask::default(),
            axis: SweepAxis::Beta2 {
                beta1: 0.9,
                values: vec![0.9, 0.95, 0.99, 0.999],
            },
            batch_sizes: vec![4, 128],
            eta: 3e-3,
            eps: 1e-8,
            epochs: 200,
            seeds: vec![0, 1, 2],
        }
    }
}

impl SweepConfig {
    /// Uses `count` consecutive seeds starting at `base`.
    pub fn with_seeds(self, base: u64, count: usize) -> Self {
        Self {
            seeds: (base..base + count as u64).collect(),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.axis.values().is_empty(), || {
            "the β grid must be nonempty".into()
        })?;
        ensure(!self.batch_sizes.is_empty(), || {
            "the batch-size grid must be nonempty".into()
        })?;
        ensure(self.seeds.len() >= 3, || {
            format!("at least 3 seeds are required, got {}", self.seeds.len())
        })?;
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        ensure(seeds.len() == self.seeds.len(), || {
            "seeds must be distinct".into()
        })?;
        for (b1, b2) in self.axis.pairs() {
            HyperParams::adam(self.eta, b1, b2, self.eps).validate()?;
        }
        Ok(())
    }
}

/// One training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub eta: f64,
    pub seed: u64,
    /// 0 means the initialization was never improved on.
    pub epoch_of_best: usize,
    pub best_val_loss: f64,
    /// `‖∇L_train‖₁` at the best iterate.
    pub sharpness_l1: f64,
    pub trace_sigma: f64,
    /// `None` when the training gradient vanishes at the best iterate.
    pub lambda_at_best: Option<f64>,
    pub diverged: bool,
}

/// Seed average at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAverage {
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub eta: f64,
    pub n_seeds: usize,
    pub n_diverged: usize,
    pub mean_best_val_loss: f64,
    pub std_best_val_loss: f64,
    pub mean_epoch_of_best: f64,
    pub mean_sharpness_l1: f64,
    pub mean_trace_sigma: f64,
    pub mean_lambda_at_best: Option<f64>,
}

/// Least-squares slope of the seed-averaged best validation loss against the
/// varied β, for one batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSlope {
    pub batch_size: usize,
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub records: Vec<SweepRecord>,
    pub averages: Vec<SweepAverage>,
    pub slopes: Vec<BatchSlope>,
    /// Whether the slope sign differs between the smallest and largest batch
    /// size. Informational only.
    pub sign_reversal: Option<bool>,
}

fn mean_loss<P: PerSampleProblem + ?Sized>(problem: &P, theta: &Vector) -> f64 {
    (0..problem.n_samples())
        .map(|p| problem.per_sample_value(p, theta))
        .sum::<f64>()
        / problem.n_samples() as f64
}

fn summarize_point<P: PerSampleProblem + ?Sized>(
    train: &P,
    theta: &Vector,
    batch_size: usize,
) -> Result<(f64, f64, Option<f64>)> {
    let n = train.n_samples();
    let grads: Vec<Vector> = (0..n).map(|p| train.per_sample_grad(p, theta)).collect();
    let g = grads
        .iter()
        .fold(Vector::zeros(theta.len()), |acc, x| acc + x)
        / n as f64;
    let trace_sigma = grads.iter().map(|x| (x - &g).norm_squared()).sum::<f64>() / n as f64;
    let gn = g.norm_squared();
    let lambda = if gn.sqrt() > MIN_GRAD_NORM && n >= 2 {
        Some(lambda_ratio(n, batch_size, trace_sigma / gn)?)
    } else {
        None
    };
    Ok((g.lp_norm(1), trace_sigma, lambda))
}

/// Trains one run and reports its best validation loss.
#[allow(clippy::too_many_arguments)]
pub fn train_run<P: PerSampleProblem + ?Sized, Q: PerSampleProblem + ?Sized>(
    train: &P,
    val: &Q,
    theta0: &Vector,
    hp: &HyperParams,
    batch_size: usize,
    epochs: usize,
    seed: u64,
) -> Result<SweepRecord> {
    hp.validate()?;
    let n = train.n_samples();
    ensure(batch_size >= 1 && n.is_multiple_of(batch_size), || {
        format!("batch size {batch_size} must divide N = {n}")
    })?;
    let m = n / batch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut state = AdamState::new(theta0.len());
    let mut theta = theta0.clone();
    let mut best = (0usize, mean_loss(val, &theta), theta.clone());
    let mut diverged = false;
    'epochs: for epoch in 1..=epochs {
        let part = PartitionSpec::random(m, batch_size, &mut rng)?;
        for k in 0..m {
            let g = batch_gradient(train, part.batch(k), &theta);
            match adam_step(&state, &g, hp) {
                Ok((next, delta)) => {
                    state = next;
                    theta += delta;
                }
                Err(_) => {
                    diverged = true;
                    break 'epochs;
                }
            }
            if !theta.iter().all(|v| v.is_finite()) || theta.amax() > DIVERGENCE_LIMIT {
                diverged = true;
                break 'epochs;
            }
        }
        let loss = mean_loss(val, &theta);
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        if loss < best.1 {
            best = (epoch, loss, theta.clone());
        }
    }
    let (sharpness_l1, trace_sigma, lambda_at_best) = summarize_point(train, &best.2, batch_size)?;
    Ok(SweepRecord {
        beta1: hp.beta1,
        beta2: hp.beta2,
        batch_size,
        eta: hp.eta,
        seed,
        epoch_of_best: best.0,
        best_val_loss: best.1,
        sharpness_l1,
        trace_sigma,
        lambda_at_best,
        diverged,
    })
}

type Problem = Box<dyn PerSampleProblem>;
type Initializer = Box<dyn Fn(u64) -> Vector + Send + Sync>;

/// Train set, validation set and the seeded initializer.
fn build_task(task: &SweepTask) -> Result<(Problem, Problem, Initializer)> {
    match task {
        SweepTask::TeacherStudent(cfg) => {
            let (train, val) = TeacherStudentMlp::generate(cfg)?;
            let init = train.clone();
            Ok((
                Box::new(train),
                Box::new(val),
                Box::new(move |s| init.init_params(s)),
            ))
        }
        SweepTask::Logistic2D {
            n_train,
            n_val,
            data_seed,
        } => {
            let (train, val) = Logistic2D::split(*n_train, *n_val, *data_seed)?;
            Ok((
                Box::new(train),
                Box::new(val),
                Box::new(|_| Vector::zeros(2)),
            ))
        }
    }
}

fn average(group: &[&SweepRecord]) -> SweepAverage {
    let k = group.len() as f64;
    let mean = |f: &dyn Fn(&SweepRecord) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / k;
    let mean_loss = mean(&|r| r.best_val_loss);
    let var = group
        .iter()
        .map(|r| (r.best_val_loss - mean_loss).powi(2))
        .sum::<f64>()
        / (k - 1.0).max(1.0);
    let lambdas: Option<Vec<f64>> = group.iter().map(|r| r.lambda_at_best).collect();
    let r0 = group[0];
    SweepAverage {
        beta1: r0.beta1,
        beta2: r0.beta2,
        batch_size: r0.batch_size,
        eta: r0.eta,
        n_seeds: group.len(),
        n_diverged: group.iter().filter(|r| r.diverged).count(),
        mean_best_val_loss: mean_loss,
        std_best_val_loss: var.sqrt(),
        mean_epoch_of_best: mean(&|r| r.epoch_of_best as f64),
        mean_sharpness_l1: mean(&|r| r.sharpness_l1),
        mean_trace_sigma: mean(&|r| r.trace_sigma),
        mean_lambda_at_best: lambdas.map(|l| l.iter().sum::<f64>() / k),
    }
}

/// Runs the full grid in parallel; records come back in grid order
/// (β pair, batch size, seed).
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let (train, val, init) = build_task(&cfg.task)?;
    let mut jobs = Vec::new();
    for (b1, b2) in cfg.axis.pairs() {
        for &bs in &cfg.batch_sizes {
            for &seed in &cfg.seeds {
                jobs.push((b1, b2, bs, seed));
            }
        }
    }
    let records: Vec<SweepRecord> = jobs
        .par_iter()
        .map(|&(b1, b2, bs, seed)| {
            let hp = HyperParams::adam(cfg.eta, b1, b2, cfg.eps);
            train_run(&*train, &*val, &init(seed), &hp, bs, cfg.epochs, seed)
        })
        .collect::<Result<_>>()?;
    let averages: Vec<SweepAverage> = records
        .chunks(cfg.seeds.len())
        .map(|c| average(&c.iter().collect::<Vec<_>>()))
        .collect();
    let slopes: Vec<BatchSlope> = cfg
        .batch_sizes
        .iter()
        .map(|&bs| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = averages
                .iter()
                .filter(|a| a.batch_size == bs)
                .map(|a| (cfg.axis.varied(a.beta1, a.beta2), a.mean_best_val_loss))
                .unzip();
            BatchSlope {
                batch_size: bs,
                slope: fit_slope(&xs, &ys),
            }
        })
        .collect();
    let smallest = cfg.batch_sizes.iter().min().copied();
    let largest = cfg.batch_sizes.iter().max().copied();
    let slope_of = |bs: Option<usize>| {
        slopes
            .iter()
            .find(|s| Some(s.batch_size) == bs)
            .and_then(|s| s.slope)
    };
    let sign_reversal = match (slope_of(smallest), slope_of(largest)) {
        (Some(a), Some(b)) if smallest != largest => Some(a.signum() != b.signum()),
        _ => None,
    };
    Ok(SweepReport {
        config: cfg.clone(),
        records,
        averages,
        slopes,
        sign_reversal,
    })
}
