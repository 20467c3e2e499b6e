//! Evaluation backends for noise monomials.
//!
//! The expansions are polynomials in batch noises. [`RealizedNoise`] plugs in
//! the noises of one partition; [`ExpectedNoise`] replaces every monomial by
//! its permutation expectation, so the same expansion code yields `E_π` of
//! each term.

use crate::problem::{PartitionSpec, SampleDerivatives};
use crate::{Matrix, Vector};

/// Values of noise monomials up to degree two.
pub trait NoiseAlgebra {
    /// `d_{p,i}`.
    fn grad(&self, p: usize, i: usize) -> f64;
    /// `d_{k,ij}`.
    fn hess(&self, k: usize, i: usize, j: usize) -> f64;
    /// `d_{p,i} d_{q,j}`.
    fn grad_grad(&self, p: usize, i: usize, q: usize, j: usize) -> f64;
    /// `d_{k,ij} d_{r,l}`.
    fn hess_grad(&self, k: usize, i: usize, j: usize, r: usize, l: usize) -> f64;
}

/// Noises of batches `0..=n` of a fixed partition.
#[derive(Debug, Clone)]
pub struct RealizedNoise {
    grads: Vec<Vector>,
    hessians: Vec<Matrix>,
}

impl RealizedNoise {
    pub fn new(samples: &SampleDerivatives, partition: &PartitionSpec, n: usize) -> Self {
        let mut grads = Vec::with_capacity(n + 1);
        let mut hessians = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let noise = samples.noise(partition.batch(k));
            grads.push(noise.d_i);
            hessians.push(noise.d_ij);
        }
        Self { grads, hessians }
    }
}

impl NoiseAlgebra for RealizedNoise {
    fn grad(&self, p: usize, i: usize) -> f64 {
        self.grads[p][i]
    }

    fn hess(&self, k: usize, i: usize, j: usize) -> f64 {
        self.hessians[k][(i, j)]
    }

    fn grad_grad(&self, p: usize, i: usize, q: usize, j: usize) -> f64 {
        self.grads[p][i] * self.grads[q][j]
    }

    fn hess_grad(&self, k: usize, i: usize, j: usize, r: usize, l: usize) -> f64 {
        self.hessians[k][(i, j)] * self.grads[r][l]
    }
}

/// Permutation expectations: degree-one monomials vanish, degree-two
/// monomials are `(m−1)/(N−1)` times a covariance on the same batch and
/// `−1/(N−1)` times it across batches.
#[derive(Debug, Clone)]
pub struct ExpectedNoise {
    sigma: Matrix,
    /// `t[l][(i, j)] = T_{ij,l}`.
    t: Vec<Matrix>,
    same: f64,
    cross: f64,
}

impl ExpectedNoise {
    pub fn new(samples: &SampleDerivatives, m: usize) -> Self {
        let d = samples.dim();
        let n = samples.n_samples() as f64;
        let sigma = samples.covariance().sigma;
        let t = (0..d)
            .map(|l| Matrix::from_fn(d, d, |i, j| samples.hess_grad_covariance(i, j, l)))
            .collect();
        let (same, cross) = if n > 1.0 {
            ((m as f64 - 1.0) / (n - 1.0), -1.0 / (n - 1.0))
        } else {
            (0.0, 0.0)
        };
        Self {
            sigma,
            t,
            same,
            cross,
        }
    }

    fn factor(&self, p: usize, q: usize) -> f64 {
        if p == q {
            self.same
        } else {
            self.cross
        }
    }
}

impl NoiseAlgebra for ExpectedNoise {
    fn grad(&self, _p: usize, _i: usize) -> f64 {
        0.0
    }

    fn hess(&self, _k: usize, _i: usize, _j: usize) -> f64 {
        0.0
    }

    fn grad_grad(&self, p: usize, i: usize, q: usize, j: usize) -> f64 {
        self.factor(p, q) * self.sigma[(i, j)]
    }

    fn hess_grad(&self, k: usize, i: usize, j: usize, r: usize, l: usize) -> f64 {
        self.factor(k, r) * self.t[l][(i, j)]
    }
}
