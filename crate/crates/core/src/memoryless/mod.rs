//! The memory-free approximating iteration
//! `θ̃_{t+1} = θ̃_t − η main_t(θ̃_t) − η² corr_t(θ̃_t)`.
//!
//! Main and correction terms evaluate every mini-batch loss of the epoch at
//! the same point. For Adam the correction is `L/R − M P / R³` built from the
//! auxiliary vectors of [`AuxiliaryTerms`]; for SGD with momentum it is the
//! Hessian-weighted sum of past momentum directions.

mod closeness;
mod generic;

pub use closeness::{closeness_scaling, replicate_epoch, ClosenessReport, ClosenessRun};
pub use generic::{generic_main_correction, AdamMemory, MemoryUpdate, SgdmMemory, FD_STEP};

use crate::coeffs::ema_weight;
use crate::error::{Error, Result};
use crate::optim::{Algorithm, HyperParams, IterationKind, Trajectory, TrajectoryMeta};
use crate::problem::{check_theta, PartitionSpec, PerSampleProblem, SampleDerivatives};
use crate::{Matrix, Vector};
use serde::{Deserialize, Serialize};

/// Iterates beyond this magnitude abort a run as divergent.
pub const DIVERGENCE_CUTOFF: f64 = 1e8;

/// Gradients and Hessians of batches `0..=t` at one point.
#[derive(Debug, Clone)]
pub struct BatchDerivatives {
    pub grads: Vec<Vector>,
    pub hessians: Vec<Matrix>,
}

impl BatchDerivatives {
    pub fn evaluate<P: PerSampleProblem + ?Sized>(
        problem: &P,
        partition: &PartitionSpec,
        theta: &Vector,
        t: usize,
    ) -> Result<Self> {
        check_theta(problem, theta)?;
        partition.check_against(problem)?;
        check_step(partition, t)?;
        let d = theta.len();
        let mut grads = Vec::with_capacity(t + 1);
        let mut hessians = Vec::with_capacity(t + 1);
        for k in 0..=t {
            let batch = partition.batch(k);
            let mut g = Vector::zeros(d);
            let mut h = Matrix::zeros(d, d);
            for &p in batch {
                g += problem.per_sample_grad(p, theta);
                h += problem.per_sample_hess(p, theta);
            }
            grads.push(g / batch.len() as f64);
            hessians.push(h / batch.len() as f64);
        }
        Ok(Self { grads, hessians })
    }

    /// Batch statistics from cached per-sample derivatives.
    pub fn from_samples(samples: &SampleDerivatives, partition: &PartitionSpec, t: usize) -> Self {
        let grads = (0..=t)
            .map(|k| samples.batch_grad(partition.batch(k)))
            .collect();
        let hessians = (0..=t)
            .map(|k| samples.batch_hess(partition.batch(k)))
            .collect();
        Self { grads, hessians }
    }

    pub fn horizon(&self) -> usize {
        self.grads.len() - 1
    }
}

fn check_step(partition: &PartitionSpec, t: usize) -> Result<()> {
    if t >= partition.m() {
        Err(Error::OutOfRange {
            index: t,
            limit: partition.m(),
        })
    } else {
        Ok(())
    }
}

/// The vectors `M_t`, `R_t`, `L_t`, `P_t` at a single point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryTerms {
    /// `M_{t,j} = Σ_k μ_{t,k} ∇_j L_k`.
    pub m: Vector,
    /// `R_{t,j} = sqrt(Σ_k ν_{t,k} (∇_j L_k)² + ε)`.
    pub r: Vector,
    /// `L_{t,j} = Σ_{k<t} μ_{t,k} Σ_i ∇_ij L_k Σ_{l=k}^{t−1} M_{l,i}/R_{l,i}`.
    pub l_term: Vector,
    /// `P_{t,j} = Σ_{k<t} ν_{t,k} ∇_j L_k Σ_i ∇_ij L_k Σ_{l=k}^{t−1} M_{l,i}/R_{l,i}`.
    pub p: Vector,
}

impl AuxiliaryTerms {
    /// Adam main term `M/R`.
    pub fn main(&self) -> Vector {
        self.m.component_div(&self.r)
    }

    /// Adam correction `L/R − M P / R³`.
    pub fn correction(&self) -> Vector {
        Vector::from_iterator(
            self.m.len(),
            (0..self.m.len()).map(|j| {
                let r = self.r[j];
                self.l_term[j] / r - self.m[j] * self.p[j] / (r * r * r)
            }),
        )
    }
}

/// Auxiliary vectors at horizon `t` from batch derivatives.
///
/// `M_l` and the second-moment sums are carried by the recursions
/// `S_l = β S_{l−1} + g_l`, and the inner sums over `l` are suffix sums, so
/// the cost is `O(t · dim²)`.
pub fn adam_auxiliary(bd: &BatchDerivatives, t: usize, hp: &HyperParams) -> AuxiliaryTerms {
    let d = bd.grads[0].len();
    let (b1, b2) = (hp.beta1, hp.beta2);
    let mut s1 = Vector::zeros(d);
    let mut s2 = Vector::zeros(d);
    let mut ratios: Vec<Vector> = Vec::with_capacity(t);
    let (mut m, mut r) = (Vector::zeros(d), Vector::zeros(d));
    for l in 0..=t {
        let g = &bd.grads[l];
        s1 = s1 * b1 + g;
        s2 = s2 * b2 + g.component_mul(g);
        let c1 = (1.0 - b1) / (1.0 - b1.powi(l as i32 + 1));
        let c2 = (1.0 - b2) / (1.0 - b2.powi(l as i32 + 1));
        m = &s1 * c1;
        r = (&s2 * c2).map(|v| (v + hp.eps).sqrt());
        if l < t {
            ratios.push(m.component_div(&r));
        }
    }
    let mut l_term = Vector::zeros(d);
    let mut p = Vector::zeros(d);
    let mut q = Vector::zeros(d);
    for k in (0..t).rev() {
        q += &ratios[k];
        let hq = bd.hessians[k].tr_mul(&q);
        l_term += &hq * ema_weight(b1, t, k);
        p += bd.grads[k].component_mul(&hq) * ema_weight(b2, t, k);
    }
    AuxiliaryTerms { m, r, l_term, p }
}

/// Main and correction terms of SGD with momentum at horizon `t`.
pub fn sgdm_terms(bd: &BatchDerivatives, t: usize, hp: &HyperParams) -> (Vector, Vector) {
    let d = bd.grads[0].len();
    let beta = hp.beta;
    // F_s = Σ_{k≤s} β^{s−k} g_k for s ≤ t.
    let mut momenta = Vec::with_capacity(t + 1);
    let mut f = Vector::zeros(d);
    for g in &bd.grads[..=t] {
        f = f * beta + g;
        momenta.push(f.clone());
    }
    let main = momenta[t].clone();
    let mut corr = Vector::zeros(d);
    let mut suffix = Vector::zeros(d);
    for k in (0..t).rev() {
        suffix += &momenta[k];
        corr += &bd.hessians[k] * &suffix * beta.powi((t - k) as i32);
    }
    (main, corr)
}

/// `Σ_k μ_{t,k} ∇L_k(θ) / sqrt(Σ_k ν_{t,k} (∇L_k(θ))² + ε)`, coordinatewise.
pub fn adam_main_term<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
) -> Result<Vector> {
    hp.validate()?;
    Ok(adam_auxiliary(
        &BatchDerivatives::evaluate(problem, partition, theta, t)?,
        t,
        hp,
    )
    .main())
}

/// The Adam correction `L/R − M P / R³` at step `t`.
pub fn adam_correction_term<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
) -> Result<Vector> {
    hp.validate()?;
    Ok(adam_auxiliary(
        &BatchDerivatives::evaluate(problem, partition, theta, t)?,
        t,
        hp,
    )
    .correction())
}

/// `(main, correction)` of SGD with momentum at step `t`.
pub fn sgdm_main_correction<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
) -> Result<(Vector, Vector)> {
    hp.validate()?;
    Ok(sgdm_terms(
        &BatchDerivatives::evaluate(problem, partition, theta, t)?,
        t,
        hp,
    ))
}

/// Runs `steps ≤ m` memoryless iterations.
pub fn run_memoryless<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    hp: &HyperParams,
    theta0: &Vector,
    algo: Algorithm,
    steps: usize,
) -> Result<Trajectory> {
    hp.validate()?;
    check_theta(problem, theta0)?;
    partition.check_against(problem)?;
    if steps > partition.m() {
        return Err(Error::InvalidArgument(format!(
            "single-epoch horizon {steps} exceeds the {} available batches",
            partition.m()
        )));
    }
    let mut theta = theta0.clone();
    let mut points = Vec::with_capacity(steps + 1);
    points.push(theta.clone());
    for t in 0..steps {
        let bd = BatchDerivatives::evaluate(problem, partition, &theta, t)?;
        let (main, corr) = match algo {
            Algorithm::Adam => {
                let aux = adam_auxiliary(&bd, t, hp);
                (aux.main(), aux.correction())
            }
            Algorithm::Sgdm => sgdm_terms(&bd, t, hp),
        };
        theta = theta - main * hp.eta - corr * (hp.eta * hp.eta);
        let magnitude = theta.amax();
        if !magnitude.is_finite() || magnitude > DIVERGENCE_CUTOFF {
            return Err(Error::Diverged {
                step: t + 1,
                magnitude,
            });
        }
        points.push(theta.clone());
    }
    let meta = TrajectoryMeta {
        algorithm: algo,
        kind: IterationKind::Memoryless,
        hyper: *hp,
        partition: Some(partition.clone()),
        epochs: 1,
        seed: None,
    };
    Ok(Trajectory { points, meta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{scale_noise, RandomPsdQuadratic, ShiftedQuadratic};

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    #[test]
    fn first_step_main_term_is_normalized_gradient() {
        let q = ShiftedQuadratic::from_centers(vec![v1(1.0), v1(5.0)]).unwrap();
        let part = PartitionSpec::identity(2, 1).unwrap();
        let hp = HyperParams::adam(0.1, 0.9, 0.99, 1e-6);
        let f = adam_main_term(&q, &part, &v1(0.0), 0, &hp).unwrap();
        assert!((f[0] - (-1.0) / (1.0f64 + 1e-6).sqrt()).abs() < 1e-15);
        assert_eq!(
            adam_correction_term(&q, &part, &v1(0.0), 0, &hp).unwrap()[0],
            0.0
        );
    }

    #[test]
    fn noiseless_main_term_is_sign_of_gradient() {
        let q = RandomPsdQuadratic::random(6, 3, 2).unwrap();
        let z = scale_noise(&q, 0.0).unwrap();
        let part = PartitionSpec::identity(3, 2).unwrap();
        let theta = Vector::from_vec(vec![2.0, -1.0, 0.5]);
        let g = crate::problem::full_loss_grad(&q, &theta).unwrap().grad;
        let f = adam_main_term(
            &z,
            &part,
            &theta,
            2,
            &HyperParams::adam(0.1, 0.9, 0.99, 1e-14),
        )
        .unwrap();
        for j in 0..3 {
            assert!((f[j] - g[j].signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn memoryless_betas_give_zero_correction() {
        let q = RandomPsdQuadratic::random(6, 2, 4).unwrap();
        let part = PartitionSpec::identity(6, 1).unwrap();
        let theta = Vector::from_vec(vec![0.7, -0.3]);
        let hp = HyperParams {
            beta1: 0.0,
            beta2: 0.0,
            beta: 0.0,
            ..HyperParams::default()
        };
        assert_eq!(
            adam_correction_term(&q, &part, &theta, 4, &hp)
                .unwrap()
                .amax(),
            0.0
        );
        assert_eq!(
            sgdm_main_correction(&q, &part, &theta, 4, &hp)
                .unwrap()
                .1
                .amax(),
            0.0
        );
    }

    #[test]
    fn out_of_range_step_is_rejected() {
        let q = ShiftedQuadratic::from_centers(vec![v1(1.0), v1(5.0)]).unwrap();
        let part = PartitionSpec::identity(2, 1).unwrap();
        assert!(adam_main_term(&q, &part, &v1(0.0), 2, &HyperParams::default()).is_err());
    }

    #[test]
    fn residual_guard_reports_divergence() {
        let q = ShiftedQuadratic::from_centers(vec![v1(0.0), v1(0.0)]).unwrap();
        let part = PartitionSpec::identity(2, 1).unwrap();
        let hp = HyperParams::sgdm(1e9, 0.0);
        let err = run_memoryless(&q, &part, &hp, &v1(1.0), Algorithm::Sgdm, 2).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }
}
