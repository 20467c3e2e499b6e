//! Memory removal for an arbitrary history-dependent update, by finite
//! differences. Slow; used to cross-check the analytic Adam and SGDM terms.

use crate::error::{ensure, Result};
use crate::optim::HyperParams;
use crate::problem::{PartitionSpec, PerSampleProblem};
use crate::Vector;

/// Central-difference step for partial derivatives of the update.
pub const FD_STEP: f64 = 1e-5;

/// An update direction `F_s(θ_s, …, θ_0)` that may depend on the whole history.
pub trait MemoryUpdate {
    fn dim(&self) -> usize;
    /// `F_s` given `history = [θ_0, …, θ_s]`.
    fn update(&self, history: &[Vector]) -> Vector;
}

/// `(F_t(θ, …, θ), Σ_{k=1}^{t} ∂F_t/∂θ_{t−k} · Σ_{s=t−k}^{t−1} F_s(θ, …, θ))`.
///
/// The Jacobians are central differences with step `h`.
pub fn generic_main_correction<U: MemoryUpdate + ?Sized>(
    update: &U,
    theta: &Vector,
    t: usize,
    h: f64,
) -> Result<(Vector, Vector)> {
    ensure(theta.len() == update.dim(), || {
        "parameter length does not match the update".into()
    })?;
    ensure(h > 0.0, || "finite-difference step must be positive".into())?;
    let d = theta.len();
    let flat = |s: usize| vec![theta.clone(); s + 1];
    let directions: Vec<Vector> = (0..=t).map(|s| update.update(&flat(s))).collect();
    let main = directions[t].clone();
    let mut corr = Vector::zeros(d);
    let mut suffix = Vector::zeros(d);
    for k in (0..t).rev() {
        suffix += &directions[k];
        for i in 0..d {
            let mut plus = flat(t);
            let mut minus = flat(t);
            plus[k][i] += h;
            minus[k][i] -= h;
            let column = (update.update(&plus) - update.update(&minus)) / (2.0 * h);
            corr += column * suffix[i];
        }
    }
    Ok((main, corr))
}

fn history_gradients<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    history: &[Vector],
) -> Vec<Vector> {
    history
        .iter()
        .enumerate()
        .map(|(k, th)| crate::optim::batch_gradient(problem, partition.batch(k), th))
        .collect()
}

/// Bias-corrected Adam direction `m̂_s / sqrt(v̂_s + ε)` as a function of history.
pub struct AdamMemory<'a, P: ?Sized> {
    pub problem: &'a P,
    pub partition: &'a PartitionSpec,
    pub hp: HyperParams,
}

impl<P: PerSampleProblem + ?Sized> MemoryUpdate for AdamMemory<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn update(&self, history: &[Vector]) -> Vector {
        let s = history.len() - 1;
        let grads = history_gradients(self.problem, self.partition, history);
        let d = self.dim();
        let (mut m, mut v) = (Vector::zeros(d), Vector::zeros(d));
        for (k, g) in grads.iter().enumerate() {
            m += g * crate::coeffs::ema_weight(self.hp.beta1, s, k);
            v += g.component_mul(g) * crate::coeffs::ema_weight(self.hp.beta2, s, k);
        }
        m.component_div(&v.map(|x| (x + self.hp.eps).sqrt()))
    }
}

/// Momentum direction `Σ_k β^{s−k} ∇L_k(θ_k)` as a function of history.
pub struct SgdmMemory<'a, P: ?Sized> {
    pub problem: &'a P,
    pub partition: &'a PartitionSpec,
    pub hp: HyperParams,
}

impl<P: PerSampleProblem + ?Sized> MemoryUpdate for SgdmMemory<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn update(&self, history: &[Vector]) -> Vector {
        let s = history.len() - 1;
        let grads = history_gradients(self.problem, self.partition, history);
        let mut f = Vector::zeros(self.dim());
        for (k, g) in grads.iter().enumerate() {
            f += g * self.hp.beta.powi((s - k) as i32);
        }
        f
    }
}
