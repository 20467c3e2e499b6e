//! Per-sample objectives, mini-batch aggregation and noise statistics.
//!
//! Every quantity here is an exact average of per-sample oracles. A
//! [`PartitionSpec`] splits the `N` samples into `m` batches of size `b`
//! following a permutation; the noise of batch `k` is the difference between
//! the batch loss (and its derivatives) and the full-batch loss.

mod config;
mod families;
mod wrappers;

pub use config::ProblemConfig;
pub use families::{
    Logistic2D, RandomPsdQuadratic, ShiftedQuadratic, TeacherStudentConfig, TeacherStudentMlp,
};
pub use wrappers::{replicate, scale_noise, NoiseScaled, Replicated};

use crate::error::{ensure, Error, Result};
use crate::{Matrix, Vector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gradient coordinates smaller than this in magnitude are treated as zero.
pub const GRADIENT_FLOOR: f64 = 1e-10;

/// Built-in loss families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyId {
    ShiftedQuadratic,
    #[serde(rename = "logistic-2d")]
    Logistic2D,
    RandomPsdQuadratic,
    TeacherStudentMlp,
}

/// A finite-sum objective `L(θ) = (1/N) Σ_p ℓ_p(θ)` with analytic per-sample
/// value, gradient and Hessian.
pub trait PerSampleProblem: Send + Sync {
    fn n_samples(&self) -> usize;
    fn dim(&self) -> usize;
    fn family_id(&self) -> FamilyId;
    fn per_sample_value(&self, p: usize, theta: &Vector) -> f64;
    fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector;
    fn per_sample_hess(&self, p: usize, theta: &Vector) -> Matrix;
}

macro_rules! forward_problem {
    ($($ty:ty),*) => {$(
        impl<P: PerSampleProblem + ?Sized> PerSampleProblem for $ty {
            fn n_samples(&self) -> usize { (**self).n_samples() }
            fn dim(&self) -> usize { (**self).dim() }
            fn family_id(&self) -> FamilyId { (**self).family_id() }
            fn per_sample_value(&self, p: usize, theta: &Vector) -> f64 {
                (**self).per_sample_value(p, theta)
            }
            fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector {
                (**self).per_sample_grad(p, theta)
            }
            fn per_sample_hess(&self, p: usize, theta: &Vector) -> Matrix {
                (**self).per_sample_hess(p, theta)
            }
        }
    )*};
}
forward_problem!(&P, Box<P>, std::sync::Arc<P>);

pub(crate) fn check_theta<P: PerSampleProblem + ?Sized>(problem: &P, theta: &Vector) -> Result<()> {
    if theta.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("parameter vector"));
    }
    Ok(())
}

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Full-batch loss and its first two derivatives at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct FullBatch {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
    /// `s_i = sign g_i`.
    pub signs: Vector,
    /// `∇_j ‖g‖₁ = Σ_i s_i g_ij`.
    pub grad_l1_deriv: Vector,
}

impl FullBatch {
    fn from_parts(value: f64, grad: Vector, hess: Matrix) -> Self {
        let signs = grad.map(sign);
        let grad_l1_deriv = hess.tr_mul(&signs);
        Self {
            value,
            grad,
            hess,
            signs,
            grad_l1_deriv,
        }
    }

    /// Coordinates whose gradient magnitude is below [`GRADIENT_FLOOR`].
    pub fn flagged_coordinates(&self) -> Vec<usize> {
        flagged_coordinates(&self.grad)
    }

    /// Rejects points where some gradient coordinate vanishes.
    pub fn ensure_nondegenerate(&self) -> Result<()> {
        ensure_nondegenerate(&self.grad)
    }
}

/// Coordinates whose magnitude is below [`GRADIENT_FLOOR`].
pub fn flagged_coordinates(g: &Vector) -> Vec<usize> {
    g.iter()
        .enumerate()
        .filter(|(_, v)| v.abs() < GRADIENT_FLOOR)
        .map(|(i, _)| i)
        .collect()
}

pub fn ensure_nondegenerate(g: &Vector) -> Result<()> {
    let coords = flagged_coordinates(g);
    if coords.is_empty() {
        Ok(())
    } else {
        Err(Error::DegenerateGradient {
            coords,
            threshold: GRADIENT_FLOOR,
        })
    }
}

/// `L(θ)`, `∇L(θ)` and `∇²L(θ)` as exact per-sample averages.
pub fn full_loss_grad<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
) -> Result<FullBatch> {
    Ok(SampleDerivatives::evaluate(problem, theta)?.full)
}

/// Mini-batch noise of one batch: `d = L_k − L` and its first two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensors {
    pub d: f64,
    pub d_i: Vector,
    pub d_ij: Matrix,
}

/// Empirical covariance of per-sample gradients and the derivative of its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCovariance {
    /// `Σ_ij = (1/N) Σ_p ∇_i(ℓ_p − L) ∇_j(ℓ_p − L)`.
    pub sigma: Matrix,
    /// Entry `(i, j)` holds `∇_i Σ_jj`.
    pub grad_sigma_diag: Matrix,
}

impl EmpiricalCovariance {
    pub fn trace(&self) -> f64 {
        self.sigma.trace()
    }
}

/// Every per-sample value, gradient and Hessian at one point, cached so that
/// batch statistics for many partitions cost only averaging.
#[derive(Debug, Clone)]
pub struct SampleDerivatives {
    pub values: Vec<f64>,
    pub grads: Vec<Vector>,
    pub hessians: Vec<Matrix>,
    pub full: FullBatch,
}

impl SampleDerivatives {
    pub fn evaluate<P: PerSampleProblem + ?Sized>(problem: &P, theta: &Vector) -> Result<Self> {
        check_theta(problem, theta)?;
        let n = problem.n_samples();
        ensure(n > 0, || "problem has no samples".into())?;
        let values: Vec<f64> = (0..n).map(|p| problem.per_sample_value(p, theta)).collect();
        let grads: Vec<Vector> = (0..n).map(|p| problem.per_sample_grad(p, theta)).collect();
        let hessians: Vec<Matrix> = (0..n).map(|p| problem.per_sample_hess(p, theta)).collect();
        let all: Vec<usize> = (0..n).collect();
        let (value, grad, hess) = mean_of(&values, &grads, &hessians, &all);
        if !value.is_finite() || grad.iter().chain(hess.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("per-sample derivatives"));
        }
        let full = FullBatch::from_parts(value, grad, hess);
        Ok(Self {
            values,
            grads,
            hessians,
            full,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.full.grad.len()
    }

    /// Loss, gradient and Hessian averaged over `indices`.
    pub fn batch_mean(&self, indices: &[usize]) -> (f64, Vector, Matrix) {
        mean_of(&self.values, &self.grads, &self.hessians, indices)
    }

    /// Gradient averaged over `indices`.
    pub fn batch_grad(&self, indices: &[usize]) -> Vector {
        let mut g = Vector::zeros(self.dim());
        for &p in indices {
            g += &self.grads[p];
        }
        g / indices.len() as f64
    }

    /// Hessian averaged over `indices`.
    pub fn batch_hess(&self, indices: &[usize]) -> Matrix {
        let d = self.dim();
        let mut h = Matrix::zeros(d, d);
        for &p in indices {
            h += &self.hessians[p];
        }
        h / indices.len() as f64
    }

    /// Noise tensors of the batch made of `indices`.
    pub fn noise(&self, indices: &[usize]) -> NoiseTensors {
        let (v, g, h) = self.batch_mean(indices);
        NoiseTensors {
            d: v - self.full.value,
            d_i: g - &self.full.grad,
            d_ij: h - &self.full.hess,
        }
    }

    pub fn covariance(&self) -> EmpiricalCovariance {
        let d = self.dim();
        let n = self.n_samples() as f64;
        let mut sigma = Matrix::zeros(d, d);
        let mut grad_sigma_diag = Matrix::zeros(d, d);
        for (g, h) in self.grads.iter().zip(&self.hessians) {
            let dg = g - &self.full.grad;
            let dh = h - &self.full.hess;
            sigma += &dg * dg.transpose();
            for i in 0..d {
                for j in 0..d {
                    grad_sigma_diag[(i, j)] += 2.0 * dh[(i, j)] * dg[j];
                }
            }
        }
        sigma /= n;
        grad_sigma_diag /= n;
        // Exact symmetry regardless of summation order.
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        EmpiricalCovariance {
            sigma,
            grad_sigma_diag,
        }
    }

    /// `T_{ij,l} = (1/N) Σ_p (∇²ℓ_p − ∇²L)_ij (∇ℓ_p − ∇L)_l`, the covariance
    /// between Hessian and gradient deviations.
    pub fn hess_grad_covariance(&self, i: usize, j: usize, l: usize) -> f64 {
        let g = &self.full.grad;
        let h = &self.full.hess;
        let s: f64 = self
            .grads
            .iter()
            .zip(&self.hessians)
            .map(|(gp, hp)| (hp[(i, j)] - h[(i, j)]) * (gp[l] - g[l]))
            .sum();
        s / self.n_samples() as f64
    }
}

fn mean_of(
    values: &[f64],
    grads: &[Vector],
    hessians: &[Matrix],
    indices: &[usize],
) -> (f64, Vector, Matrix) {
    let d = grads[0].len();
    let mut v = 0.0;
    let mut g = Vector::zeros(d);
    let mut h = Matrix::zeros(d, d);
    for &p in indices {
        v += values[p];
        g += &grads[p];
        h += &hessians[p];
    }
    let k = indices.len() as f64;
    (v / k, g / k, h / k)
}

/// A permutation of the samples together with the batch layout `m · b = N`.
///
/// Batch `k` consists of `perm[k·b .. (k+1)·b]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    m: usize,
    b: usize,
    perm: Vec<usize>,
}

impl PartitionSpec {
    pub fn new(m: usize, b: usize, perm: Vec<usize>) -> Result<Self> {
        ensure(m >= 1 && b >= 1, || {
            format!("batch count {m} and size {b} must be positive")
        })?;
        ensure(perm.len() == m * b, || {
            format!("m·b = {} but permutation has {} entries", m * b, perm.len())
        })?;
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            ensure(p < perm.len() && !seen[p], || {
                "perm is not a bijection on 0..N".into()
            })?;
            seen[p] = true;
        }
        Ok(Self { m, b, perm })
    }

    pub fn identity(m: usize, b: usize) -> Result<Self> {
        Self::new(m, b, (0..m * b).collect())
    }

    /// A uniformly random permutation drawn from `rng`.
    pub fn random<R: Rng + ?Sized>(m: usize, b: usize, rng: &mut R) -> Result<Self> {
        let mut perm: Vec<usize> = (0..m * b).collect();
        perm.shuffle(rng);
        Self::new(m, b, perm)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn n(&self) -> usize {
        self.perm.len()
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Sample indices of batch `k`.
    pub fn batch(&self, k: usize) -> &[usize] {
        &self.perm[k * self.b..(k + 1) * self.b]
    }

    pub(crate) fn check_against<P: PerSampleProblem + ?Sized>(&self, problem: &P) -> Result<()> {
        ensure(self.n() == problem.n_samples(), || {
            format!(
                "partition covers {} samples, problem has {}",
                self.n(),
                problem.n_samples()
            )
        })
    }
}

/// Noise tensors of batch `k` at `θ`.
pub fn minibatch_noise<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    k: usize,
    theta: &Vector,
) -> Result<NoiseTensors> {
    partition.check_against(problem)?;
    if k >= partition.m() {
        return Err(Error::OutOfRange {
            index: k,
            limit: partition.m(),
        });
    }
    Ok(SampleDerivatives::evaluate(problem, theta)?.noise(partition.batch(k)))
}

pub fn empirical_covariance<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
) -> Result<EmpiricalCovariance> {
    Ok(SampleDerivatives::evaluate(problem, theta)?.covariance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four_point() -> ShiftedQuadratic {
        ShiftedQuadratic::from_centers(
            [1.0, 2.0, 3.0, 6.0]
                .iter()
                .map(|&a| Vector::from_element(1, a))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn full_gradient_of_shifted_quadratic() {
        let fb = full_loss_grad(&four_point(), &Vector::zeros(1)).unwrap();
        assert_eq!(fb.grad[0], -3.0);
        assert_eq!(fb.signs[0], -1.0);
        assert_eq!(fb.grad_l1_deriv[0], -1.0);
    }

    #[test]
    fn gradient_vanishes_at_the_minimizer() {
        let q = RandomPsdQuadratic::random(6, 3, 11).unwrap();
        let fb = full_loss_grad(&q, &q.minimizer().unwrap()).unwrap();
        assert!(fb.grad.amax() < 1e-12);
        assert_eq!(fb.flagged_coordinates(), vec![0, 1, 2]);
        assert!(fb.ensure_nondegenerate().is_err());
    }

    #[test]
    fn hand_enumerated_batch_noise() {
        let part = PartitionSpec::identity(2, 2).unwrap();
        let n0 = minibatch_noise(&four_point(), &part, 0, &Vector::zeros(1)).unwrap();
        assert_eq!(n0.d_i[0], 1.5);
        let n1 = minibatch_noise(&four_point(), &part, 1, &Vector::zeros(1)).unwrap();
        assert_eq!(n1.d_i[0], -1.5);
        assert!(matches!(
            minibatch_noise(&four_point(), &part, 2, &Vector::zeros(1)),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn single_batch_has_no_noise() {
        let q = RandomPsdQuadratic::random(5, 2, 3).unwrap();
        let part = PartitionSpec::identity(1, 5).unwrap();
        let nt = minibatch_noise(&q, &part, 0, &Vector::from_vec(vec![0.3, -0.1])).unwrap();
        assert!(nt.d.abs() < 1e-14 && nt.d_i.amax() < 1e-14 && nt.d_ij.amax() < 1e-14);
    }

    #[test]
    fn covariance_of_four_point_example() {
        let cov = empirical_covariance(&four_point(), &Vector::zeros(1)).unwrap();
        assert!((cov.sigma[(0, 0)] - 3.5).abs() < 1e-15);
        assert_eq!(cov.grad_sigma_diag[(0, 0)], 0.0);
        let half = scale_noise(four_point(), 0.5).unwrap();
        let cov = empirical_covariance(&half, &Vector::zeros(1)).unwrap();
        assert!((cov.sigma[(0, 0)] - 0.875).abs() < 1e-14);
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let q = ShiftedQuadratic::from_centers(vec![Vector::from_vec(vec![1.0, -2.0]); 4]).unwrap();
        let cov = empirical_covariance(&q, &Vector::from_vec(vec![0.5, 0.5])).unwrap();
        assert_eq!(cov.sigma.amax(), 0.0);
    }

    #[test]
    fn partition_validation() {
        assert!(PartitionSpec::new(2, 2, vec![0, 1, 2, 2]).is_err());
        assert!(PartitionSpec::new(2, 2, vec![0, 1, 2]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PartitionSpec::random(3, 2, &mut rng).unwrap();
        assert_eq!(p.batch(2).len(), 2);
        let part = PartitionSpec::identity(2, 3).unwrap();
        assert!(minibatch_noise(&four_point(), &part, 0, &Vector::zeros(1)).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        assert!(matches!(
            full_loss_grad(&four_point(), &Vector::zeros(2)),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }
}
