//! Noise expansions of the Adam correction and their remainder-order checks.
//!
//! Each quantity of [`ExpansionId`] is split into components homogeneous of
//! degree 0, 1 and 2 in the batch noises. Scaling all noise by `δ` scales the
//! degree-`k` component by `δ^k`, so the truncation error of the degree-2
//! expansion must shrink like `δ³`; [`remainder_order`] fits that slope.
//!
//! The same expansion evaluated with [`ExpectedNoise`] gives the exact
//! permutation expectation of its degree ≤ 2 part at a finite horizon.

mod algebra;
mod limits;
mod terms;
mod weights;

pub use algebra::{ExpectedNoise, NoiseAlgebra, RealizedNoise};
pub use limits::{l_over_r_limits, mp_over_r3_limits, ShapeCoefficients};

use crate::error::{ensure, Error, Result};
use crate::memoryless::{adam_auxiliary, BatchDerivatives};
use crate::optim::HyperParams;
use crate::problem::{
    ensure_nondegenerate, scale_noise, PartitionSpec, PerSampleProblem, SampleDerivatives,
};
use crate::stats::loglog_slope;
use crate::Vector;
use serde::{Deserialize, Serialize};
use terms::Expander;
use weights::ExpansionWeights;

/// Largest admissible `max |δ d_{k,j}| / |g_j|` on a remainder ladder.
pub const MAX_NOISE_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpansionId {
    Rinv,
    M,
    L,
    P,
    PRinv,
    MRinv2,
    LoverR,
    MPoverR3,
}

impl ExpansionId {
    pub const ALL: [ExpansionId; 8] = [
        ExpansionId::Rinv,
        ExpansionId::M,
        ExpansionId::L,
        ExpansionId::P,
        ExpansionId::PRinv,
        ExpansionId::MRinv2,
        ExpansionId::LoverR,
        ExpansionId::MPoverR3,
    ];
}

/// Degree components of one coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Split of `c2` by MBN1..MBN5 moment shape, for `L/R` and `MP/R³`.
    pub groups: Option<[f64; 5]>,
}

impl Components {
    pub(crate) fn plain(c0: f64, c1: f64, c2: f64) -> Self {
        Self {
            c0,
            c1,
            c2,
            groups: None,
        }
    }

    pub(crate) fn grouped(c0: f64, c1: f64, groups: [f64; 5]) -> Self {
        Self {
            c0,
            c1,
            c2: groups.iter().sum(),
            groups: Some(groups),
        }
    }

    /// Sum of the components up to `order`.
    pub fn truncated(&self, order: usize) -> f64 {
        match order {
            0 => self.c0,
            1 => self.c0 + self.c1,
            _ => self.c0 + self.c1 + self.c2,
        }
    }
}

/// Components of `id` for every coordinate, with noise monomials evaluated by `alg`.
pub fn components_with<A: NoiseAlgebra>(
    id: ExpansionId,
    grad: &Vector,
    hess: &crate::Matrix,
    hp: &HyperParams,
    n: usize,
    alg: &A,
) -> Result<Vec<Components>> {
    ensure_nondegenerate(grad)?;
    let w = ExpansionWeights::new(hp.beta1, hp.beta2, n);
    let ex = Expander::new(grad, hess, &w, alg);
    Ok((0..grad.len())
        .map(|j| match id {
            ExpansionId::Rinv => ex.rinv(j),
            ExpansionId::M => ex.m(j),
            ExpansionId::L => ex.l(j),
            ExpansionId::P => ex.p(j),
            ExpansionId::PRinv => ex.p_rinv(j),
            ExpansionId::MRinv2 => ex.m_rinv2(j),
            ExpansionId::LoverR => ex.l_over_r(j),
            ExpansionId::MPoverR3 => ex.mp_over_r3(j),
        })
        .collect())
}

/// Components for the noises of one partition at step `t`.
pub fn realized_components<P: PerSampleProblem + ?Sized>(
    id: ExpansionId,
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
) -> Result<Vec<Components>> {
    hp.validate()?;
    partition.check_against(problem)?;
    if t >= partition.m() {
        return Err(Error::OutOfRange {
            index: t,
            limit: partition.m(),
        });
    }
    let samples = SampleDerivatives::evaluate(problem, theta)?;
    let alg = RealizedNoise::new(&samples, partition, t);
    components_with(id, &samples.full.grad, &samples.full.hess, hp, t, &alg)
}

/// Permutation expectation of each component at step `t` for `m` batches.
pub fn expected_components<P: PerSampleProblem + ?Sized>(
    id: ExpansionId,
    problem: &P,
    m: usize,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
) -> Result<Vec<Components>> {
    hp.validate()?;
    ensure(m >= 1 && problem.n_samples().is_multiple_of(m), || {
        format!("{m} batches do not divide N = {}", problem.n_samples())
    })?;
    if t >= m {
        return Err(Error::OutOfRange { index: t, limit: m });
    }
    let samples = SampleDerivatives::evaluate(problem, theta)?;
    let alg = ExpectedNoise::new(&samples, m);
    components_with(id, &samples.full.grad, &samples.full.hess, hp, t, &alg)
}

/// The expansion of `id` truncated at `order ≤ 2`, per coordinate.
pub fn expansion_value<P: PerSampleProblem + ?Sized>(
    id: ExpansionId,
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
    order: usize,
) -> Result<Vector> {
    ensure(order <= 2, || format!("expansion order {order} exceeds 2"))?;
    let comps = realized_components(id, problem, partition, theta, t, hp)?;
    Ok(Vector::from_iterator(
        comps.len(),
        comps.iter().map(|c| c.truncated(order)),
    ))
}

/// The exact value of `id` computed from its definition.
pub fn exact_value<P: PerSampleProblem + ?Sized>(
    id: ExpansionId,
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
) -> Result<Vector> {
    let bd = BatchDerivatives::evaluate(problem, partition, theta, t)?;
    let aux = adam_auxiliary(&bd, t, hp);
    let (m, r, l, p) = (&aux.m, &aux.r, &aux.l_term, &aux.p);
    Ok(match id {
        ExpansionId::Rinv => r.map(|x| 1.0 / x),
        ExpansionId::M => m.clone(),
        ExpansionId::L => l.clone(),
        ExpansionId::P => p.clone(),
        ExpansionId::PRinv => p.component_div(r),
        ExpansionId::MRinv2 => m.component_div(&r.component_mul(r)),
        ExpansionId::LoverR => l.component_div(r),
        ExpansionId::MPoverR3 => m.component_mul(p).component_div(&r.map(|x| x.powi(3))),
    })
}

/// Result of a remainder-order fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFitReport {
    pub id: ExpansionId,
    pub delta_ladder: Vec<f64>,
    /// `max_j |exact − degree-2 expansion|` at each ladder entry.
    pub residuals: Vec<f64>,
    /// Log-log slope of residual against δ; `None` when a residual is zero.
    pub fitted_slope: Option<f64>,
    /// `max |δ d_{k,j}| / |g_j|` at the largest δ.
    pub noise_ratio: f64,
}

/// Largest `|d_{k,j}| / |g_j|` over batches `0..=t`.
pub fn noise_ratio<P: PerSampleProblem + ?Sized>(
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
) -> Result<f64> {
    let samples = SampleDerivatives::evaluate(problem, theta)?;
    ensure_nondegenerate(&samples.full.grad)?;
    let g = &samples.full.grad;
    let mut worst: f64 = 0.0;
    for k in 0..=t {
        let d = samples.noise(partition.batch(k)).d_i;
        for j in 0..g.len() {
            worst = worst.max(d[j].abs() / g[j].abs());
        }
    }
    Ok(worst)
}

/// Residual of the degree-2 expansion of `id` on `scale_noise(δ)` for each δ.
pub fn remainder_order<P: PerSampleProblem + ?Sized>(
    id: ExpansionId,
    problem: &P,
    partition: &PartitionSpec,
    theta: &Vector,
    t: usize,
    hp: &HyperParams,
    delta_ladder: &[f64],
) -> Result<OrderFitReport> {
    ensure(delta_ladder.len() >= 2, || {
        "the δ ladder needs at least two entries".into()
    })?;
    ensure(
        delta_ladder.iter().all(|d| d.is_finite() && *d > 0.0),
        || "δ values must be positive".into(),
    )?;
    ensure(delta_ladder.windows(2).all(|w| w[0] > w[1]), || {
        "the δ ladder must be strictly decreasing".into()
    })?;
    partition.check_against(problem)?;
    let ratio = delta_ladder[0] * noise_ratio(problem, partition, theta, t)?;
    if ratio > MAX_NOISE_RATIO {
        return Err(Error::OutsideExpansionRegion {
            ratio,
            limit: MAX_NOISE_RATIO,
        });
    }
    let residuals = delta_ladder
        .iter()
        .map(|&delta| {
            let scaled = scale_noise(problem, delta)?;
            let exact = exact_value(id, &scaled, partition, theta, t, hp)?;
            let approx = expansion_value(id, &scaled, partition, theta, t, hp, 2)?;
            Ok((exact - approx).amax())
        })
        .collect::<Result<Vec<f64>>>()?;
    let fitted_slope = loglog_slope(delta_ladder, &residuals);
    Ok(OrderFitReport {
        id,
        delta_ladder: delta_ladder.to_vec(),
        residuals,
        fitted_slope,
        noise_ratio: ratio,
    })
}
