//! The expected Adam correction split into the full-batch term and the five
//! mini-batch-noise terms.
//!
//! [`Horizon::Asymptotic`] multiplies the closed-form constants C1..C5 by the
//! covariance moments of sampling without replacement. [`Horizon::Epoch`]
//! takes the exact permutation expectation of the degree ≤ 2 expansion at the
//! last step `n = m − 1` of the epoch, including cross-batch moments; it is
//! the finite-`n` counterpart whose difference from the brute-force average
//! is purely cubic in the noise.

use crate::coeffs::{constants, BetaPair};
use crate::error::{ensure, Error, Result};
use crate::expansion::{
    expected_components, l_over_r_limits, mp_over_r3_limits, Components, ExpansionId,
};
use crate::optim::HyperParams;
use crate::problem::{ensure_nondegenerate, PerSampleProblem, SampleDerivatives};
use crate::Vector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Horizon {
    Asymptotic,
    Epoch,
}

/// All terms for one coordinate. `total = |g_j| E_π G_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateTerms {
    pub fb_term: f64,
    pub mbn1: f64,
    pub mbn2: f64,
    pub mbn3: f64,
    pub mbn4: f64,
    pub mbn5: f64,
    pub total: f64,
    /// `total / |g_j|`, the expected correction itself.
    pub expected_correction: f64,
}

impl CoordinateTerms {
    fn new(abs_g: f64, fb_term: f64, mbn: [f64; 5]) -> Self {
        let total = fb_term + mbn.iter().sum::<f64>();
        Self {
            fb_term,
            mbn1: mbn[0],
            mbn2: mbn[1],
            mbn3: mbn[2],
            mbn4: mbn[3],
            mbn5: mbn[4],
            total,
            expected_correction: total / abs_g,
        }
    }

    pub fn mbn(&self) -> [f64; 5] {
        [self.mbn1, self.mbn2, self.mbn3, self.mbn4, self.mbn5]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledCorrection {
    pub horizon: Horizon,
    pub betas: BetaPair,
    pub m: usize,
    pub b: usize,
    pub coordinates: Vec<CoordinateTerms>,
}

impl AssembledCorrection {
    pub fn expected_correction(&self) -> Vector {
        Vector::from_iterator(
            self.coordinates.len(),
            self.coordinates.iter().map(|c| c.expected_correction),
        )
    }

    pub fn totals(&self) -> Vector {
        Vector::from_iterator(
            self.coordinates.len(),
            self.coordinates.iter().map(|c| c.total),
        )
    }
}

fn check_layout<P: PerSampleProblem + ?Sized>(problem: &P, m: usize, b: usize) -> Result<()> {
    ensure(m >= 1 && b >= 1 && m * b == problem.n_samples(), || {
        format!("m·b = {} does not match N = {}", m * b, problem.n_samples())
    })
}

/// FB + MBN1..MBN5 with the closed-form constants.
pub fn assemble_expected_correction<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    betas: BetaPair,
    m: usize,
    b: usize,
) -> Result<AssembledCorrection> {
    assemble_with_horizon(problem, theta, betas, m, b, Horizon::Asymptotic)
}

pub fn assemble_with_horizon<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    betas: BetaPair,
    m: usize,
    b: usize,
    horizon: Horizon,
) -> Result<AssembledCorrection> {
    check_layout(problem, m, b)?;
    let samples = SampleDerivatives::evaluate(problem, theta)?;
    ensure_nondegenerate(&samples.full.grad)?;
    let coordinates = match horizon {
        Horizon::Asymptotic => asymptotic_terms(&samples, betas, m, b)?,
        Horizon::Epoch => epoch_terms(problem, theta, &samples, betas, m)?,
    };
    Ok(AssembledCorrection {
        horizon,
        betas,
        m,
        b,
        coordinates,
    })
}

/// Per coordinate: `∇_j‖g‖₁/|g_j|` and the five moment shapes of
/// [`ShapeCoefficients`](crate::expansion::ShapeCoefficients), with
/// sampling-without-replacement moments.
fn moment_shapes(samples: &SampleDerivatives, m: usize, b: usize) -> Vec<(f64, [f64; 5])> {
    let full = &samples.full;
    let (g, h, s) = (&full.grad, &full.hess, &full.signs);
    let cov = samples.covariance();
    let (sigma, dsig) = (&cov.sigma, &cov.grad_sigma_diag);
    let n = (m * b) as f64;
    let kappa = if n > 1.0 {
        (m as f64 - 1.0) / (n - 1.0)
    } else {
        0.0
    };
    let d = g.len();
    (0..d)
        .map(|j| {
            let aj = g[j].abs();
            let gl1 = full.grad_l1_deriv[j];
            let shape1 = gl1 * kappa * sigma[(j, j)] / (g[j] * g[j] * aj);
            let shape2 = (0..d)
                .map(|i| s[i] * h[(i, j)] * kappa * sigma[(i, i)] / (g[i] * g[i]))
                .sum::<f64>()
                / aj;
            let shape3 = s[j] / (aj * aj)
                * (0..d)
                    .map(|i| s[i] * 0.5 * kappa * dsig[(i, j)])
                    .sum::<f64>();
            let shape4 = (0..d)
                .map(|i| 0.5 * kappa * dsig[(j, i)] / g[i].abs())
                .sum::<f64>()
                / aj;
            let shape5 = s[j] / (aj * aj)
                * (0..d)
                    .map(|i| h[(i, j)] / g[i].abs() * kappa * sigma[(i, j)])
                    .sum::<f64>();
            (gl1 / aj, [shape1, shape2, shape3, shape4, shape5])
        })
        .collect()
}

fn asymptotic_terms(
    samples: &SampleDerivatives,
    betas: BetaPair,
    m: usize,
    b: usize,
) -> Result<Vec<CoordinateTerms>> {
    let c = constants(betas)?.as_array();
    let fb = constants(betas)?.fb;
    Ok(moment_shapes(samples, m, b)
        .into_iter()
        .zip(samples.full.grad.iter())
        .map(|((lead, shapes), gj)| {
            let aj = gj.abs();
            CoordinateTerms::new(
                aj,
                aj * fb * lead,
                std::array::from_fn(|k| aj * c[k] * shapes[k]),
            )
        })
        .collect())
}

/// Large-horizon expectation of the degree ≤ 2 expansion of `L/R` or
/// `M P / R³`, from the limit coefficients and the covariance moments.
///
/// Degree-1 components are zero in expectation and reported as such.
pub fn asymptotic_expansion<P: PerSampleProblem + ?Sized>(
    id: ExpansionId,
    problem: &P,
    theta: &Vector,
    betas: BetaPair,
    m: usize,
    b: usize,
) -> Result<Vec<Components>> {
    let coef = match id {
        ExpansionId::LoverR => l_over_r_limits(betas),
        ExpansionId::MPoverR3 => mp_over_r3_limits(betas),
        other => {
            return Err(Error::InvalidArgument(format!(
                "no limit coefficients for {other:?}"
            )));
        }
    };
    check_layout(problem, m, b)?;
    let samples = SampleDerivatives::evaluate(problem, theta)?;
    ensure_nondegenerate(&samples.full.grad)?;
    Ok(moment_shapes(&samples, m, b)
        .into_iter()
        .map(|(lead, shapes)| Components {
            c0: coef.fb * lead,
            c1: 0.0,
            c2: (0..5).map(|k| coef.mbn[k] * shapes[k]).sum(),
            groups: Some(std::array::from_fn(|k| coef.mbn[k] * shapes[k])),
        })
        .collect())
}

fn epoch_terms<P: PerSampleProblem + ?Sized>(
    problem: &P,
    theta: &Vector,
    samples: &SampleDerivatives,
    betas: BetaPair,
    m: usize,
) -> Result<Vec<CoordinateTerms>> {
    let hp = HyperParams::adam(0.0, betas.beta1, betas.beta2, 0.0);
    let n = m - 1;
    let lr = expected_components(ExpansionId::LoverR, problem, m, theta, n, &hp)?;
    let mp = expected_components(ExpansionId::MPoverR3, problem, m, theta, n, &hp)?;
    let g = &samples.full.grad;
    Ok((0..g.len())
        .map(|j| {
            let aj = g[j].abs();
            let (gl, gm) = (
                lr[j].groups.unwrap_or_default(),
                mp[j].groups.unwrap_or_default(),
            );
            let mbn = std::array::from_fn(|k| aj * (gl[k] - gm[k]));
            CoordinateTerms::new(aj, aj * (lr[j].c0 - mp[j].c0), mbn)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{replicate, scale_noise, RandomPsdQuadratic};

    fn fixture() -> (RandomPsdQuadratic, Vector) {
        (
            RandomPsdQuadratic::random(8, 3, 4).unwrap(),
            Vector::from_vec(vec![4.0, -3.0, 2.5]),
        )
    }

    #[test]
    fn noiseless_problem_leaves_only_the_full_batch_term() {
        let (q, th) = fixture();
        let z = scale_noise(&q, 0.0).unwrap();
        for horizon in [Horizon::Asymptotic, Horizon::Epoch] {
            let a =
                assemble_with_horizon(&z, &th, BetaPair::new(0.9, 0.999).unwrap(), 4, 2, horizon)
                    .unwrap();
            for c in &a.coordinates {
                assert!(c.mbn().iter().all(|v| v.abs() < 1e-12));
                assert!((c.total - c.fb_term).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_betas_cancel_fb_and_difference_terms() {
        let (q, th) = fixture();
        let a =
            assemble_expected_correction(&q, &th, BetaPair::new(0.9, 0.9).unwrap(), 4, 2).unwrap();
        for c in &a.coordinates {
            assert_eq!(c.fb_term, 0.0);
            assert_eq!(c.mbn2, 0.0);
            assert_eq!(c.mbn4, 0.0);
            assert_eq!(c.mbn5, 0.0);
            assert!(c.mbn1 != 0.0);
        }
    }

    #[test]
    fn single_batch_has_no_noise_terms() {
        let (q, th) = fixture();
        let a =
            assemble_expected_correction(&q, &th, BetaPair::new(0.9, 0.99).unwrap(), 1, 8).unwrap();
        assert!(a
            .coordinates
            .iter()
            .all(|c| c.mbn().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn epoch_horizon_approaches_the_asymptotic_form() {
        let (q, th) = fixture();
        let betas = BetaPair::new(0.5, 0.6).unwrap();
        let mut gaps = Vec::new();
        for copies in [2, 8, 32] {
            let r = replicate(&q, copies).unwrap();
            let m = 4 * copies;
            let asym = assemble_with_horizon(&r, &th, betas, m, 2, Horizon::Asymptotic).unwrap();
            let epoch = assemble_with_horizon(&r, &th, betas, m, 2, Horizon::Epoch).unwrap();
            gaps.push((asym.totals() - epoch.totals()).amax());
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[2] < 0.05 * gaps[0], "{gaps:?}");
    }

    #[test]
    fn division_by_the_gradient_magnitude_is_reported() {
        let (q, th) = fixture();
        let a =
            assemble_expected_correction(&q, &th, BetaPair::new(0.9, 0.99).unwrap(), 4, 2).unwrap();
        let g = crate::problem::full_loss_grad(&q, &th).unwrap().grad;
        for (c, gj) in a.coordinates.iter().zip(g.iter()) {
            assert!(
                (c.expected_correction * gj.abs() - c.total).abs() < 1e-12 * c.total.abs().max(1.0)
            );
        }
    }

    #[test]
    fn averaged_mp_over_r3_expansion_tends_to_its_limit() {
        let (q, th) = fixture();
        let betas = BetaPair::new(0.5, 0.6).unwrap();
        let hp = HyperParams::adam(0.0, 0.5, 0.6, 0.0);
        let mut gaps = Vec::new();
        for copies in [1, 2, 4, 8] {
            let r = replicate(&q, copies).unwrap();
            let m = 4 * copies;
            let limit = asymptotic_expansion(ExpansionId::MPoverR3, &r, &th, betas, m, 2).unwrap();
            let finite =
                expected_components(ExpansionId::MPoverR3, &r, m, &th, m - 1, &hp).unwrap();
            let gap = limit
                .iter()
                .zip(&finite)
                .map(|(a, f)| (a.truncated(2) - f.truncated(2)).abs())
                .fold(0.0, f64::max);
            gaps.push(gap);
        }
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }
}
