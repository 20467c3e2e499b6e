//! Permutation expectations of noise monomials.
//!
//! A permutation of the `N = m·b` samples induces batch noises `d_k`. The
//! expectation over uniformly random permutations of a product of at most two
//! noise factors is available three ways: exact enumeration (small `N`), the
//! closed form of sampling without replacement, and Monte Carlo.
//!
//! For two per-sample features `X`, `Y` with covariance
//! `C_XY = (1/N) Σ_p (X_p − X̄)(Y_p − Ȳ)`, the batch means satisfy
//! `E d_k(X) d_k(Y) = (m−1)/(mb−1) · C_XY` and, for `k ≠ q`,
//! `E d_k(X) d_q(Y) = −C_XY/(mb−1)`. With `X`, `Y` gradient coordinates this
//! gives `Σ`; with a Hessian entry and a gradient coordinate it gives
//! `∇_i Σ_jj / 2` on the diagonal.

use crate::error::{ensure, Error, Result};
use crate::memoryless::{adam_auxiliary, BatchDerivatives};
use crate::optim::HyperParams;
use crate::problem::{check_theta, PartitionSpec, PerSampleProblem, SampleDerivatives};
use crate::Vector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Largest sample count accepted by exact enumeration.
pub const MAX_EXACT_N: usize = 8;
/// Minimum Monte Carlo sample count.
pub const MIN_MC_SAMPLES: usize = 100;
/// Work items per parallel chunk; fixed so reductions are reproducible.
const CHUNK: usize = 256;

/// One noise factor: the value, gradient or Hessian noise of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "order", rename_all = "kebab-case")]
pub enum NoiseFactor {
    /// `d_k`.
    Value { batch: usize },
    /// `d_{k,i}`.
    Grad { batch: usize, i: usize },
    /// `d_{k,ij}`.
    Hess { batch: usize, i: usize, j: usize },
}

impl NoiseFactor {
    pub fn batch(self) -> usize {
        match self {
            NoiseFactor::Value { batch }
            | NoiseFactor::Grad { batch, .. }
            | NoiseFactor::Hess { batch, .. } => batch,
        }
    }

    /// Per-sample feature behind the factor.
    fn feature(self, s: &SampleDerivatives, p: usize) -> f64 {
        match self {
            NoiseFactor::Value { .. } => s.values[p],
            NoiseFactor::Grad { i, .. } => s.grads[p][i],
            NoiseFactor::Hess { i, j, .. } => s.hessians[p][(i, j)],
        }
    }

    fn full(self, s: &SampleDerivatives) -> f64 {
        match self {
            NoiseFactor::Value { .. } => s.full.value,
            NoiseFactor::Grad { i, .. } => s.full.grad[i],
            NoiseFactor::Hess { i, j, .. } => s.full.hess[(i, j)],
        }
    }

    /// Noise of this factor for the given batch members.
    fn noise(self, s: &SampleDerivatives, members: &[usize]) -> f64 {
        members.iter().map(|&p| self.feature(s, p)).sum::<f64>() / members.len() as f64
            - self.full(s)
    }
}

/// A product of at most two noise factors.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MomentSpec {
    pub factors: Vec<NoiseFactor>,
}

impl MomentSpec {
    pub fn new(factors: Vec<NoiseFactor>) -> Result<Self> {
        ensure(factors.len() <= 2, || {
            format!("at most two factors are supported, got {}", factors.len())
        })?;
        Ok(Self { factors })
    }

    /// `d_{p,i} d_{q,j}`.
    pub fn grad_grad(p: usize, i: usize, q: usize, j: usize) -> Self {
        Self {
            factors: vec![
                NoiseFactor::Grad { batch: p, i },
                NoiseFactor::Grad { batch: q, i: j },
            ],
        }
    }

    /// `d_{p,ij} d_{q,l}`.
    pub fn hess_grad(p: usize, i: usize, j: usize, q: usize, l: usize) -> Self {
        Self {
            factors: vec![
                NoiseFactor::Hess { batch: p, i, j },
                NoiseFactor::Grad { batch: q, i: l },
            ],
        }
    }

    pub fn single(factor: NoiseFactor) -> Self {
        Self {
            factors: vec![factor],
        }
    }

    fn validate(&self, m: usize, dim: usize) -> Result<()> {
        ensure(self.factors.len() <= 2, || {
            "at most two factors are supported".into()
        })?;
        for f in &self.factors {
            if f.batch() >= m {
                return Err(Error::OutOfRange {
                    index: f.batch(),
                    limit: m,
                });
            }
            let coords_ok = match *f {
                NoiseFactor::Value { .. } => true,
                NoiseFactor::Grad { i, .. } => i < dim,
                NoiseFactor::Hess { i, j, .. } => i < dim && j < dim,
            };
            ensure(coords_ok, || {
                format!("coordinates of {f:?} exceed dimension {dim}")
            })?;
        }
        Ok(())
    }

    fn evaluate(&self, s: &SampleDerivatives, part: &PartitionSpec) -> f64 {
        self.factors
            .iter()
            .map(|f| f.noise(s, part.batch(f.batch())))
            .product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    Exact,
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    pub value: f64,
    pub method: MomentMethod,
    pub mc_stderr: Option<f64>,
    pub n_perms_or_samples: u64,
}

/// Exportable record of one moment evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub spec: MomentSpec,
    pub m: usize,
    pub b: usize,
    pub method: MomentMethod,
    pub value: f64,
    pub stderr: Option<f64>,
}

impl MomentRecord {
    pub fn new(spec: MomentSpec, m: usize, b: usize, result: &MomentResult) -> Self {
        Self {
            spec,
            m,
            b,
            method: result.method,
            value: result.value,
            stderr: result.mc_stderr,
        }
    }
}

fn check_layout<P: PerSampleProblem + ?Sized>(problem: &P, m: usize, b: usize) -> Result<()> {
    ensure(m >= 1 && b >= 1, || "m and b must be positive".into())?;
    ensure(m * b == problem.n_samples(), || {
        format!("m·b = {} but N = {}", m * b, problem.n_samples())
    })
}

/// Every ordered assignment of the samples to `m` batches of size `b`, each
/// batch listed in increasing order.
///
/// Each assignment stands for `(b!)^m` equally likely permutations, so the
/// uniform law on permutations induces the uniform law on assignments.
pub fn batch_assignments(m: usize, b: usize) -> Vec<Vec<usize>> {
    fn combos(
        pool: &[usize],
        b: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == b {
            out.push(cur.clone());
            return;
        }
        for idx in start..pool.len() {
            if pool.len() - idx < b - cur.len() {
                break;
            }
            cur.push(pool[idx]);
            combos(pool, b, idx + 1, cur, out);
            cur.pop();
        }
    }
    fn rec(
        remaining: Vec<usize>,
        m: usize,
        b: usize,
        prefix: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if m == 0 {
            out.push(prefix.clone());
            return;
        }
        let mut firsts = Vec::new();
        combos(&remaining, b, 0, &mut Vec::new(), &mut firsts);
        for batch in firsts {
            let rest: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|p| !batch.contains(p))
                .collect();
            prefix.extend_from_slice(&batch);
            rec(rest, m - 1, b, prefix, out);
            prefix.truncate(prefix.len() - b);
        }
    }
    let mut out = Vec::new();
    rec((0..m * b).collect(), m, b, &mut Vec::new(), &mut out);
    out
}

/// Average of `f` over all assignments, with a fixed-chunk ordered reduction.
fn average_over_assignments<T, F>(m: usize, b: usize, zero: T, f: F) -> Result<(T, u64)>
where
    T: Clone + Send + Sync + std::ops::AddAssign + std::ops::Div<f64, Output = T>,
    F: Fn(&PartitionSpec) -> T + Sync,
{
    let all = batch_assignments(m, b);
    let partials: Vec<T> = all
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<T> {
            let mut acc = zero.clone();
            for perm in chunk {
                acc += f(&PartitionSpec::new(m, b, perm.clone())?);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = zero;
    for p in partials {
        total += p;
    }
    let count = all.len();
    Ok((total / count as f64, count as u64))
}

fn refuse_large(n: usize) -> Result<()> {
    if n > MAX_EXACT_N {
        Err(Error::TooLargeForEnumeration {
            n,
            limit: MAX_EXACT_N,
        })
    } else {
        Ok(())
    }
}

/// Exact expectation by enumerating every batch assignment; requires `N ≤ 8`.
pub fn exact_moment<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    m: usize,
    b: usize,
    spec: &MomentSpec,
) -> Result<MomentResult> {
    check_layout(problem, m, b)?;
    refuse_large(m * b)?;
    spec.validate(m, problem.dim())?;
    let s = SampleDerivatives::evaluate(problem, theta)?;
    let (value, count) = average_over_assignments(m, b, 0.0, |part| spec.evaluate(&s, part))?;
    Ok(MomentResult {
        value,
        method: MomentMethod::Exact,
        mc_stderr: None,
        n_perms_or_samples: count,
    })
}

/// Closed form of sampling without replacement.
///
/// Degree-one specs have expectation zero; degree-two specs use the
/// same-batch and cross-batch covariance formulas from the module docs.
pub fn closed_form_moment<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    m: usize,
    b: usize,
    spec: &MomentSpec,
) -> Result<MomentResult> {
    check_layout(problem, m, b)?;
    spec.validate(m, problem.dim())?;
    let value = match spec.factors.as_slice() {
        [_] => 0.0,
        [x, y] => {
            let s = SampleDerivatives::evaluate(problem, theta)?;
            let cov = feature_covariance(&s, *x, *y);
            let n = (m * b) as f64;
            if x.batch() == y.batch() {
                (m as f64 - 1.0) / (n - 1.0) * cov
            } else {
                -cov / (n - 1.0)
            }
        }
        _ => {
            return Err(Error::UnsupportedMoment(format!(
                "{} factors",
                spec.factors.len()
            )))
        }
    };
    Ok(MomentResult {
        value,
        method: MomentMethod::ClosedForm,
        mc_stderr: None,
        n_perms_or_samples: 0,
    })
}

/// `(1/N) Σ_p (X_p − X̄)(Y_p − Ȳ)` for the per-sample features behind two factors.
pub(crate) fn feature_covariance(s: &SampleDerivatives, x: NoiseFactor, y: NoiseFactor) -> f64 {
    let (mx, my) = (x.full(s), y.full(s));
    let n = s.n_samples();
    (0..n)
        .map(|p| (x.feature(s, p) - mx) * (y.feature(s, p) - my))
        .sum::<f64>()
        / n as f64
}

/// Monte Carlo estimate from uniformly drawn permutations.
///
/// Samples are processed in fixed chunks, each with its own ChaCha stream
/// derived from `seed`, so results do not depend on the thread count.
pub fn mc_moment<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    m: usize,
    b: usize,
    spec: &MomentSpec,
    n_samples: usize,
    seed: u64,
) -> Result<MomentResult> {
    check_layout(problem, m, b)?;
    ensure(n_samples >= MIN_MC_SAMPLES, || {
        format!("at least {MIN_MC_SAMPLES} samples are required")
    })?;
    spec.validate(m, problem.dim())?;
    let s = SampleDerivatives::evaluate(problem, theta)?;
    let (sum, sum_sq) = mc_sums(n_samples, seed, m, b, |part| {
        let v = spec.evaluate(&s, part);
        (v, v * v)
    })?;
    let n = n_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(MomentResult {
        value: mean,
        method: MomentMethod::MonteCarlo,
        mc_stderr: Some((var / n).sqrt()),
        n_perms_or_samples: n_samples as u64,
    })
}

fn mc_sums<F>(n_samples: usize, seed: u64, m: usize, b: usize, f: F) -> Result<(f64, f64)>
where
    F: Fn(&PartitionSpec) -> (f64, f64) + Sync,
{
    let chunks: Vec<(usize, usize)> = (0..n_samples.div_ceil(CHUNK))
        .map(|c| (c, CHUNK.min(n_samples - c * CHUNK)))
        .collect();
    let partials: Vec<(f64, f64)> = chunks
        .par_iter()
        .map(|&(c, len)| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut acc = (0.0, 0.0);
            let mut perm: Vec<usize> = (0..m * b).collect();
            for _ in 0..len {
                perm.shuffle(&mut rng);
                let (v, v2) = f(&PartitionSpec::new(m, b, perm.clone())?);
                acc.0 += v;
                acc.1 += v2;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(partials
        .into_iter()
        .fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1)))
}

/// How a permutation expectation is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    Exact,
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Clone)]
struct VecSum(Vector);

impl std::ops::AddAssign for VecSum {
    fn add_assign(&mut self, rhs: Self) {
        self.0 += rhs.0;
    }
}

impl std::ops::Div<f64> for VecSum {
    type Output = VecSum;
    fn div(self, rhs: f64) -> VecSum {
        VecSum(self.0 / rhs)
    }
}

/// `E_π` of the Adam correction at the last step `t = m − 1` of the epoch,
/// every mini-batch loss evaluated at the fixed `θ`.
pub fn bruteforce_expected_correction<P: PerSampleProblem + ?Sized>(
    problem: &P,
    m: usize,
    b: usize,
    theta: &Vector,
    hp: &HyperParams,
    method: Expectation,
) -> Result<Vector> {
    check_layout(problem, m, b)?;
    check_theta(problem, theta)?;
    hp.validate()?;
    let s = SampleDerivatives::evaluate(problem, theta)?;
    let t = m - 1;
    let correction = |part: &PartitionSpec| {
        adam_auxiliary(&BatchDerivatives::from_samples(&s, part, t), t, hp).correction()
    };
    match method {
        Expectation::Exact => {
            refuse_large(m * b)?;
            let (avg, _) =
                average_over_assignments(m, b, VecSum(Vector::zeros(theta.len())), |part| {
                    VecSum(correction(part))
                })?;
            Ok(avg.0)
        }
        Expectation::MonteCarlo { samples, seed } => {
            ensure(samples >= MIN_MC_SAMPLES, || {
                format!("at least {MIN_MC_SAMPLES} samples are required")
            })?;
            let d = theta.len();
            let mut total = Vector::zeros(d);
            for j in 0..d {
                // Coordinates share the permutation stream, so each pass sees
                // the same permutations.
                let (sum, _) = mc_sums(samples, seed, m, b, |part| (correction(part)[j], 0.0))?;
                total[j] = sum / samples as f64;
            }
            Ok(total)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{scale_noise, RandomPsdQuadratic, ShiftedQuadratic};

    fn four_point() -> ShiftedQuadratic {
        ShiftedQuadratic::from_centers(
            [1.0, 2.0, 3.0, 6.0]
                .iter()
                .map(|&a| Vector::from_element(1, a))
                .collect(),
        )
        .unwrap()
    }

    fn factorial(n: usize) -> usize {
        (1..=n).product()
    }

    #[test]
    fn assignment_counts_are_multinomial() {
        for (m, b) in [(1, 4), (2, 2), (4, 2), (3, 2), (8, 1)] {
            let n = m * b;
            assert_eq!(
                batch_assignments(m, b).len(),
                factorial(n) / factorial(b).pow(m as u32)
            );
        }
    }

    #[test]
    fn hand_enumerated_four_point_moments() {
        let th = Vector::zeros(1);
        let same =
            exact_moment(&four_point(), &th, 2, 2, &MomentSpec::grad_grad(0, 0, 0, 0)).unwrap();
        assert!((same.value - 7.0 / 6.0).abs() < 1e-14);
        assert_eq!(same.n_perms_or_samples, 6);
        let cross =
            exact_moment(&four_point(), &th, 2, 2, &MomentSpec::grad_grad(0, 0, 1, 0)).unwrap();
        assert!((cross.value + 7.0 / 6.0).abs() < 1e-14);
        let cf = closed_form_moment(&four_point(), &th, 2, 2, &MomentSpec::grad_grad(0, 0, 0, 0))
            .unwrap();
        assert!((cf.value - 3.5 / 3.0).abs() < 1e-14);
        let cf = closed_form_moment(&four_point(), &th, 2, 2, &MomentSpec::grad_grad(0, 0, 1, 0))
            .unwrap();
        assert!((cf.value + 3.5 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn single_batch_moments_vanish() {
        let q = RandomPsdQuadratic::random(4, 2, 1).unwrap();
        let th = Vector::from_vec(vec![0.3, 0.9]);
        let spec = MomentSpec::hess_grad(0, 0, 1, 0, 1);
        assert!(exact_moment(&q, &th, 1, 4, &spec).unwrap().value.abs() < 1e-15);
        assert_eq!(closed_form_moment(&q, &th, 1, 4, &spec).unwrap().value, 0.0);
        let mc = mc_moment(&q, &th, 1, 4, &spec, 200, 3).unwrap();
        assert!(mc.value.abs() < 1e-15 && mc.mc_stderr.unwrap() < 1e-15);
    }

    #[test]
    fn enumeration_refuses_large_problems() {
        let q = RandomPsdQuadratic::random(10, 2, 1).unwrap();
        let err = exact_moment(
            &q,
            &Vector::zeros(2),
            5,
            2,
            &MomentSpec::grad_grad(0, 0, 0, 0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TooLargeForEnumeration { n: 10, .. }));
    }

    #[test]
    fn malformed_specs_are_rejected() {
        let th = Vector::zeros(1);
        assert!(MomentSpec::new(vec![NoiseFactor::Value { batch: 0 }; 3]).is_err());
        assert!(
            exact_moment(&four_point(), &th, 2, 2, &MomentSpec::grad_grad(0, 0, 2, 0)).is_err()
        );
        assert!(
            exact_moment(&four_point(), &th, 2, 2, &MomentSpec::grad_grad(0, 1, 0, 0)).is_err()
        );
        let empty = MomentSpec::new(vec![]).unwrap();
        assert!(matches!(
            closed_form_moment(&four_point(), &th, 2, 2, &empty),
            Err(Error::UnsupportedMoment(_))
        ));
        assert!(mc_moment(
            &four_point(),
            &th,
            2,
            2,
            &MomentSpec::grad_grad(0, 0, 0, 0),
            10,
            1
        )
        .is_err());
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let q = RandomPsdQuadratic::random(12, 2, 5).unwrap();
        let th = Vector::from_vec(vec![1.0, -1.0]);
        let spec = MomentSpec::grad_grad(0, 0, 1, 1);
        let a = mc_moment(&q, &th, 6, 2, &spec, 1000, 42).unwrap();
        let b = mc_moment(&q, &th, 6, 2, &spec, 1000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_bruteforce_equals_the_single_permutation_value() {
        let q = RandomPsdQuadratic::random(6, 2, 9).unwrap();
        let z = scale_noise(&q, 0.0).unwrap();
        let th = Vector::from_vec(vec![2.0, -1.5]);
        let hp = HyperParams::adam(0.1, 0.8, 0.95, 1e-8);
        let avg = bruteforce_expected_correction(&z, 3, 2, &th, &hp, Expectation::Exact).unwrap();
        let one = crate::memoryless::adam_correction_term(
            &z,
            &PartitionSpec::identity(3, 2).unwrap(),
            &th,
            2,
            &hp,
        )
        .unwrap();
        assert!((avg - one).amax() < 1e-12);
        let same_betas = HyperParams::adam(0.1, 0.9, 0.9, 1e-12);
        let c =
            bruteforce_expected_correction(&z, 3, 2, &th, &same_betas, Expectation::Exact).unwrap();
        assert!(c.amax() < 1e-9);
    }
}
