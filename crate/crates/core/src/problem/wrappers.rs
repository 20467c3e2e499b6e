//! Problem transformations: noise scaling and sample replication.

use super::{FamilyId, PerSampleProblem};
use crate::error::{ensure, Result};
use crate::{Matrix, Vector};

/// `ℓ'_p = L + δ (ℓ_p − L)`: the full-batch loss is unchanged and every noise
/// tensor is multiplied by `δ`.
#[derive(Debug, Clone)]
pub struct NoiseScaled<P> {
    inner: P,
    delta: f64,
}

pub fn scale_noise<P: PerSampleProblem>(problem: P, delta: f64) -> Result<NoiseScaled<P>> {
    ensure(delta >= 0.0 && delta.is_finite(), || {
        format!("noise scale must be a finite δ ≥ 0, got {delta}")
    })?;
    Ok(NoiseScaled {
        inner: problem,
        delta,
    })
}

impl<P: PerSampleProblem> NoiseScaled<P> {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn n(&self) -> f64 {
        self.inner.n_samples() as f64
    }
}

impl<P: PerSampleProblem> PerSampleProblem for NoiseScaled<P> {
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn family_id(&self) -> FamilyId {
        self.inner.family_id()
    }
    fn per_sample_value(&self, p: usize, theta: &Vector) -> f64 {
        let full = (0..self.n_samples())
            .map(|q| self.inner.per_sample_value(q, theta))
            .sum::<f64>()
            / self.n();
        full + self.delta * (self.inner.per_sample_value(p, theta) - full)
    }
    fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector {
        let mut full = Vector::zeros(self.dim());
        for q in 0..self.n_samples() {
            full += self.inner.per_sample_grad(q, theta);
        }
        full /= self.n();
        &full + (self.inner.per_sample_grad(p, theta) - &full) * self.delta
    }
    fn per_sample_hess(&self, p: usize, theta: &Vector) -> Matrix {
        let d = self.dim();
        let mut full = Matrix::zeros(d, d);
        for q in 0..self.n_samples() {
            full += self.inner.per_sample_hess(q, theta);
        }
        full /= self.n();
        &full + (self.inner.per_sample_hess(p, theta) - &full) * self.delta
    }
}

/// The sample set repeated `copies` times; sample `p` is inner sample `p mod N`.
///
/// Replication leaves `L`, `Σ` and every per-sample law unchanged while
/// allowing longer epochs.
#[derive(Debug, Clone)]
pub struct Replicated<P> {
    inner: P,
    copies: usize,
}

pub fn replicate<P: PerSampleProblem>(problem: P, copies: usize) -> Result<Replicated<P>> {
    ensure(copies >= 1, || "at least one copy is required".into())?;
    Ok(Replicated {
        inner: problem,
        copies,
    })
}

impl<P: PerSampleProblem> Replicated<P> {
    pub fn copies(&self) -> usize {
        self.copies
    }
}

impl<P: PerSampleProblem> PerSampleProblem for Replicated<P> {
    fn n_samples(&self) -> usize {
        self.inner.n_samples() * self.copies
    }
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn family_id(&self) -> FamilyId {
        self.inner.family_id()
    }
    fn per_sample_value(&self, p: usize, theta: &Vector) -> f64 {
        self.inner
            .per_sample_value(p % self.inner.n_samples(), theta)
    }
    fn per_sample_grad(&self, p: usize, theta: &Vector) -> Vector {
        self.inner
            .per_sample_grad(p % self.inner.n_samples(), theta)
    }
    fn per_sample_hess(&self, p: usize, theta: &Vector) -> Matrix {
        self.inner
            .per_sample_hess(p % self.inner.n_samples(), theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{empirical_covariance, full_loss_grad, RandomPsdQuadratic};

    #[test]
    fn negative_scale_is_rejected() {
        let q = RandomPsdQuadratic::random(4, 2, 1).unwrap();
        assert!(scale_noise(&q, -0.1).is_err());
    }

    #[test]
    fn zero_scale_collapses_samples_onto_the_mean() {
        let q = RandomPsdQuadratic::random(4, 2, 1).unwrap();
        let th = Vector::from_vec(vec![0.4, -1.0]);
        let z = scale_noise(&q, 0.0).unwrap();
        let full = full_loss_grad(&q, &th).unwrap();
        for p in 0..4 {
            assert!((z.per_sample_value(p, &th) - full.value).abs() < 1e-12);
            assert!((z.per_sample_grad(p, &th) - &full.grad).amax() < 1e-12);
        }
    }

    #[test]
    fn unit_scale_is_the_identity() {
        let q = RandomPsdQuadratic::random(4, 2, 1).unwrap();
        let th = Vector::from_vec(vec![0.4, -1.0]);
        let s = scale_noise(&q, 1.0).unwrap();
        for p in 0..4 {
            assert!((s.per_sample_grad(p, &th) - q.per_sample_grad(p, &th)).amax() < 1e-12);
        }
    }

    #[test]
    fn replication_preserves_full_batch_statistics() {
        let q = RandomPsdQuadratic::random(3, 2, 8).unwrap();
        let th = Vector::from_vec(vec![1.0, 2.0]);
        let r = replicate(&q, 4).unwrap();
        assert_eq!(r.n_samples(), 12);
        let (a, b) = (
            full_loss_grad(&q, &th).unwrap(),
            full_loss_grad(&r, &th).unwrap(),
        );
        assert!((a.grad - b.grad).amax() < 1e-12);
        let (ca, cb) = (
            empirical_covariance(&q, &th).unwrap(),
            empirical_covariance(&r, &th).unwrap(),
        );
        assert!((ca.sigma - cb.sigma).amax() < 1e-12);
    }
}
