//! Exponential series arising when the correction is averaged over a long
//! epoch, their finite-horizon partial sums and closed-form limits.
//!
//! Throughout, `μ_{l,p}` and `ν_{l,p}` are the weights of [`super::ema_weight`]
//! for `β1` and `β2`, and `n` is the horizon (the last step of the epoch).

use super::{BetaPair, CoefficientSet};
use crate::error::{ensure, Result};
use serde::{Deserialize, Serialize};

/// Identifies one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeriesId {
    /// `Σ_k μ_{n,k}(n−k)`.
    MuLag,
    /// `Σ_k ν_{n,k}(n−k)`.
    NuLag,
    /// `Σ_k μ_{n,k}ν_{n,k}(n−k)`.
    MuNuLag,
    /// `Σ_k ν_{n,k}²(n−k)`.
    NuSquaredLag,
    /// `Σ_{l<n} Σ_{k,p≤l} μ_{n,k}(3ν_{l,p}² − ν_{l,p} − 2μ_{l,p}ν_{l,p})/2`.
    MuOuterSquare,
    /// `Σ_{l<n} Σ_{k≤l} μ_{n,k}(μ_{l,k} − ν_{l,k})`.
    MuOuterHessGrad,
    /// `Σ_{l<n} Σ_{k,p≤l} μ_{n,k}ν_{n,p}(μ_{l,p} − ν_{l,p})`.
    MuNuOuterCross,
    /// `Σ_k(3ν_{n,k}² − ν_{n,k}) · Σ_k μ_{n,k}(n−k)`.
    NuDiagTimesMuLag,
    /// `Σ_k(4ν_{n,k}² − ν_{n,k} − 2μ_{n,k}ν_{n,k}) · Σ_k ν_{n,k}(n−k)`.
    MixedDiagTimesNuLag,
    /// `Σ_{l<n} Σ_{k,p≤l} ν_{n,k}(μ_{l,p} − ν_{l,p})(μ_{n,p} − 2ν_{n,p})`.
    NuOuterMixedCross,
    /// `Σ_{k<n}(n−k)ν_{n,k}(μ_{n,k} − 2ν_{n,k})`.
    MixedLag,
    /// `Σ_k ν_{n,k}(μ_{n,k} − 2ν_{n,k}) · Σ_k ν_{n,k}(n−k)`.
    MixedTimesNuLag,
    /// `Σ_k(3ν_{n,k}² − ν_{n,k}) · Σ_k ν_{n,k}(n−k)`.
    NuDiagTimesNuLag,
    /// `Σ_{l<n} Σ_{k,p≤l} ν_{n,k}ν_{n,p}(μ_{l,p} − ν_{l,p})`.
    NuNuOuterCross,
    /// `Σ_{l<n} Σ_{k,p≤l} ν_{n,k}(3ν_{l,p}² − ν_{l,p} − 2μ_{l,p}ν_{l,p})`.
    NuOuterSquare,
    /// `Σ_{l<n} Σ_{k≤l} ν_{n,k}(μ_{l,k} − ν_{l,k})`.
    NuOuterHessGrad,
}

impl SeriesId {
    pub const ALL: [SeriesId; 16] = [
        SeriesId::MuLag,
        SeriesId::NuLag,
        SeriesId::MuNuLag,
        SeriesId::NuSquaredLag,
        SeriesId::MuOuterSquare,
        SeriesId::MuOuterHessGrad,
        SeriesId::MuNuOuterCross,
        SeriesId::NuDiagTimesMuLag,
        SeriesId::MixedDiagTimesNuLag,
        SeriesId::NuOuterMixedCross,
        SeriesId::MixedLag,
        SeriesId::MixedTimesNuLag,
        SeriesId::NuDiagTimesNuLag,
        SeriesId::NuNuOuterCross,
        SeriesId::NuOuterSquare,
        SeriesId::NuOuterHessGrad,
    ];

    /// The `n → ∞` limit.
    pub fn limit(self, betas: BetaPair) -> f64 {
        let (a, b) = (betas.beta1, betas.beta2);
        let ab = a * b;
        match self {
            SeriesId::MuLag => a / (1.0 - a),
            SeriesId::NuLag => b / (1.0 - b),
            SeriesId::MuNuLag => ab * (1.0 - a) * (1.0 - b) / (1.0 - ab).powi(2),
            SeriesId::NuSquaredLag => b * b / (1.0 + b).powi(2),
            SeriesId::MuOuterSquare => {
                a * (a * b * b - ab + a + b * b - 2.0 * b) / ((1.0 - a) * (1.0 + b) * (1.0 - ab))
            }
            SeriesId::MuOuterHessGrad => a * (b - a) / ((1.0 + a) * (1.0 - ab)),
            SeriesId::MuNuOuterCross => ab * (b - a) * (1.0 - b) / ((1.0 + b) * (1.0 - ab).powi(2)),
            SeriesId::NuDiagTimesMuLag => 2.0 * a * (1.0 - 2.0 * b) / ((1.0 - a) * (1.0 + b)),
            SeriesId::MixedDiagTimesNuLag => {
                b * (3.0 - 5.0 * b) / (1.0 - b * b) - 2.0 * b * (1.0 - a) / (1.0 - ab)
            }
            SeriesId::NuOuterMixedCross => {
                b * (b - a)
                    * (a * a * b * b - 2.0 * a * a * b - a * a + 3.0 * a * b * b + a - 2.0 * b)
                    / ((1.0 + a) * (1.0 + b).powi(2) * (1.0 - ab).powi(2))
            }
            SeriesId::MixedLag => {
                (ab * (1.0 - a) * (1.0 - b) * (1.0 + b).powi(2) - 2.0 * b * b * (1.0 - ab).powi(2))
                    / ((1.0 - ab).powi(2) * (1.0 + b).powi(2))
            }
            SeriesId::MixedTimesNuLag => -b * (1.0 - b) * (1.0 + a) / ((1.0 - ab) * (1.0 + b)),
            SeriesId::NuDiagTimesNuLag => 2.0 * b * (1.0 - 2.0 * b) / ((1.0 - b) * (1.0 + b)),
            SeriesId::NuNuOuterCross => b * b * (b - a) / ((1.0 + b).powi(2) * (1.0 - ab)),
            SeriesId::NuOuterSquare => {
                2.0 * b * (a * b * b - ab + a + b * b - 2.0 * b)
                    / ((1.0 + b) * (1.0 - b) * (1.0 - ab))
            }
            SeriesId::NuOuterHessGrad => b * (b - a) / ((1.0 + b) * (1.0 - ab)),
        }
    }
}

/// Partial sum at horizon `n` and the closed-form limit.
pub fn series_partial_and_limit(id: SeriesId, betas: BetaPair, n: usize) -> Result<(f64, f64)> {
    ensure(n >= 1, || "horizon n must be at least 1".into())?;
    Ok((Partials::compute(betas, n).get(id), id.limit(betas)))
}

/// Every partial sum at one horizon, computed in `O(n)`.
///
/// Inner sums over `p ≤ l` of products of two weights are geometric, so they
/// are carried along `l` by the recursion `S_l(x) = x S_{l−1}(x) + 1`.
struct Partials {
    values: [f64; 16],
}

impl Partials {
    fn get(&self, id: SeriesId) -> f64 {
        self.values[SeriesId::ALL
            .iter()
            .position(|s| *s == id)
            .expect("every id is listed")]
    }

    fn compute(betas: BetaPair, n: usize) -> Self {
        let (a, b) = (betas.beta1, betas.beta2);
        let norm = |beta: f64, l: usize| (1.0 - beta) / (1.0 - beta.powi(l as i32 + 1));
        // Σ_{k≤l} w_{n,k}
        let cum = |beta: f64, l: usize| {
            beta.powi((n - l) as i32) * (1.0 - beta.powi(l as i32 + 1))
                / (1.0 - beta.powi(n as i32 + 1))
        };
        let (cmu_n, cnu_n) = (norm(a, n), norm(b, n));

        let mut single = [0.0f64; 7];
        for k in 0..=n {
            let mu = a.powi((n - k) as i32) * cmu_n;
            let nu = b.powi((n - k) as i32) * cnu_n;
            let lag = (n - k) as f64;
            single[0] += mu * lag;
            single[1] += nu * lag;
            single[2] += mu * nu * lag;
            single[3] += nu * nu * lag;
            single[4] += 3.0 * nu * nu - nu;
            single[5] += 4.0 * nu * nu - nu - 2.0 * mu * nu;
            single[6] += nu * (mu - 2.0 * nu);
        }
        let [mu_lag, nu_lag, munu_lag, nusq_lag, diag, mixed_diag, mixed] = single;
        let mixed_lag = munu_lag - 2.0 * nusq_lag;

        let (mut s_aa, mut s_ab, mut s_bb) = (0.0, 0.0, 0.0);
        let mut double = [0.0f64; 7];
        for l in 0..n {
            s_aa = a * a * s_aa + 1.0;
            s_ab = a * b * s_ab + 1.0;
            s_bb = b * b * s_bb + 1.0;
            let (cmu_l, cnu_l) = (norm(a, l), norm(b, l));
            let (pa, pb) = (a.powi((n - l) as i32), b.powi((n - l) as i32));
            let sq = 3.0 * cnu_l * cnu_l * s_bb - 1.0 - 2.0 * cmu_l * cnu_l * s_ab;
            // Σ_{p≤l} of products (horizon-n weight)·(step-l weight).
            let mm = cmu_n * cmu_l * pa * s_aa;
            let mn = cmu_n * cnu_l * pa * s_ab;
            let nm = cnu_n * cmu_l * pb * s_ab;
            let nn = cnu_n * cnu_l * pb * s_bb;
            let (cum_mu, cum_nu) = (cum(a, l), cum(b, l));
            double[0] += cum_mu * sq / 2.0;
            double[1] += mm - mn;
            double[2] += cum_mu * (nm - nn);
            double[3] += cum_nu * (mm - 2.0 * nm - mn + 2.0 * nn);
            double[4] += cum_nu * (nm - nn);
            double[5] += cum_nu * sq;
            double[6] += nm - nn;
        }
        let [mu_sq, mu_hg, mu_nu_cross, nu_mixed_cross, nu_nu_cross, nu_sq, nu_hg] = double;

        Self {
            values: [
                mu_lag,
                nu_lag,
                munu_lag,
                nusq_lag,
                mu_sq,
                mu_hg,
                mu_nu_cross,
                diag * mu_lag,
                mixed_diag * nu_lag,
                nu_mixed_cross,
                mixed_lag,
                mixed * nu_lag,
                diag * nu_lag,
                nu_nu_cross,
                nu_sq,
                nu_hg,
            ],
        }
    }
}

/// Composes C1–C5 and FB from series values.
fn compose(betas: BetaPair, s: impl Fn(SeriesId) -> f64) -> CoefficientSet {
    use SeriesId::*;
    CoefficientSet {
        betas,
        fb: s(MuLag) - s(NuLag),
        c1: 0.5 * s(NuDiagTimesMuLag)
            - (s(MixedDiagTimesNuLag) + s(MixedLag) - s(MixedTimesNuLag)
                + 0.5 * s(NuDiagTimesNuLag)
                - s(NuSquaredLag)),
        c2: s(MuOuterSquare) - 0.5 * s(NuOuterSquare),
        c3: -s(MuNuLag) - (s(MixedLag) - s(NuSquaredLag) + s(NuLag)),
        c4: s(MuOuterHessGrad) - s(NuOuterHessGrad),
        c5: -s(MuNuOuterCross) - (s(NuOuterMixedCross) - s(NuNuOuterCross) + s(NuOuterHessGrad)),
    }
}

/// C1–C5 and FB assembled from the partial sums at horizon `n`.
pub fn constants_from_series(betas: BetaPair, n: usize) -> Result<CoefficientSet> {
    ensure(n >= 1, || "horizon n must be at least 1".into())?;
    let p = Partials::compute(betas, n);
    Ok(compose(betas, |id| p.get(id)))
}

/// C1–C5 and FB assembled from the closed-form series limits.
pub fn constants_from_limits(betas: BetaPair) -> CoefficientSet {
    compose(betas, |id| id.limit(betas))
}

#[cfg(test)]
mod tests {
    use super::super::{constants, ema_weight};
    use super::*;

    fn pair(a: f64, b: f64) -> BetaPair {
        BetaPair::new(a, b).unwrap()
    }

    /// Literal nested-loop evaluation of every series.
    fn naive(id: SeriesId, bp: BetaPair, n: usize) -> f64 {
        let (a, b) = (bp.beta1, bp.beta2);
        let mu = |l: usize, k: usize| ema_weight(a, l, k);
        let nu = |l: usize, k: usize| ema_weight(b, l, k);
        let lag = |w: &dyn Fn(usize) -> f64| (0..=n).map(|k| w(k) * (n - k) as f64).sum::<f64>();
        let sum_k = |w: &dyn Fn(usize) -> f64| (0..=n).map(w).sum::<f64>();
        let double = |f: &dyn Fn(usize, usize, usize) -> f64| {
            let mut s = 0.0;
            for l in 0..n {
                for k in 0..=l {
                    for p in 0..=l {
                        s += f(l, k, p);
                    }
                }
            }
            s
        };
        let single_l = |f: &dyn Fn(usize, usize) -> f64| {
            let mut s = 0.0;
            for l in 0..n {
                for k in 0..=l {
                    s += f(l, k);
                }
            }
            s
        };
        let nu_lag = lag(&|k| nu(n, k));
        match id {
            SeriesId::MuLag => lag(&|k| mu(n, k)),
            SeriesId::NuLag => nu_lag,
            SeriesId::MuNuLag => lag(&|k| mu(n, k) * nu(n, k)),
            SeriesId::NuSquaredLag => lag(&|k| nu(n, k).powi(2)),
            SeriesId::MuOuterSquare => double(&|l, k, p| {
                mu(n, k) * (3.0 * nu(l, p).powi(2) - nu(l, p) - 2.0 * mu(l, p) * nu(l, p)) / 2.0
            }),
            SeriesId::MuOuterHessGrad => single_l(&|l, k| mu(n, k) * (mu(l, k) - nu(l, k))),
            SeriesId::MuNuOuterCross => {
                double(&|l, k, p| mu(n, k) * nu(n, p) * (mu(l, p) - nu(l, p)))
            }
            SeriesId::NuDiagTimesMuLag => {
                sum_k(&|k| 3.0 * nu(n, k).powi(2) - nu(n, k)) * lag(&|k| mu(n, k))
            }
            SeriesId::MixedDiagTimesNuLag => {
                sum_k(&|k| 4.0 * nu(n, k).powi(2) - nu(n, k) - 2.0 * mu(n, k) * nu(n, k)) * nu_lag
            }
            SeriesId::NuOuterMixedCross => {
                double(&|l, k, p| nu(n, k) * (mu(l, p) - nu(l, p)) * (mu(n, p) - 2.0 * nu(n, p)))
            }
            SeriesId::MixedLag => (0..n)
                .map(|k| (n - k) as f64 * nu(n, k) * (mu(n, k) - 2.0 * nu(n, k)))
                .sum(),
            SeriesId::MixedTimesNuLag => {
                sum_k(&|k| nu(n, k) * (mu(n, k) - 2.0 * nu(n, k))) * nu_lag
            }
            SeriesId::NuDiagTimesNuLag => sum_k(&|k| 3.0 * nu(n, k).powi(2) - nu(n, k)) * nu_lag,
            SeriesId::NuNuOuterCross => {
                double(&|l, k, p| nu(n, k) * nu(n, p) * (mu(l, p) - nu(l, p)))
            }
            SeriesId::NuOuterSquare => double(&|l, k, p| {
                nu(n, k) * (3.0 * nu(l, p).powi(2) - nu(l, p) - 2.0 * mu(l, p) * nu(l, p))
            }),
            SeriesId::NuOuterHessGrad => single_l(&|l, k| nu(n, k) * (mu(l, k) - nu(l, k))),
        }
    }

    #[test]
    fn fast_partials_match_nested_loops() {
        for &(a, b) in &[(0.9, 0.95), (0.6, 0.8), (0.95, 0.7), (0.0, 0.5), (0.3, 0.0)] {
            for n in [1usize, 2, 5, 17] {
                for id in SeriesId::ALL {
                    let (fast, _) = series_partial_and_limit(id, pair(a, b), n).unwrap();
                    let slow = naive(id, pair(a, b), n);
                    assert!(
                        (fast - slow).abs() < 1e-12 * (1.0 + slow.abs()),
                        "{id:?} ({a},{b}) n={n}: {fast} vs {slow}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_beta1_lag_series_is_identically_zero() {
        let (p, l) = series_partial_and_limit(SeriesId::MuLag, pair(0.0, 0.5), 10).unwrap();
        assert_eq!((p, l), (0.0, 0.0));
    }

    #[test]
    fn documented_convergence_examples() {
        let (p, l) = series_partial_and_limit(SeriesId::MuLag, pair(0.5, 0.5), 200).unwrap();
        assert_eq!(l, 1.0);
        assert!((p - l).abs() < 1e-8);
        let (p, l) = series_partial_and_limit(SeriesId::MuNuLag, pair(0.9, 0.99), 2000).unwrap();
        assert!((l - 0.9 * 0.99 * 0.1 * 0.01 / (1.0f64 - 0.891).powi(2)).abs() < 1e-15);
        assert!((p - l).abs() < 1e-6);
    }

    #[test]
    fn limits_compose_to_closed_form_constants() {
        for &(a, b) in &[(0.9, 0.999), (0.5, 0.7), (0.97, 0.6), (0.8, 0.8)] {
            let lim = constants_from_limits(pair(a, b));
            let cf = constants(pair(a, b)).unwrap();
            for (x, y) in lim.as_array().iter().zip(cf.as_array()) {
                assert!(
                    (x - y).abs() < 1e-9 * (1.0 + y.abs()),
                    "({a},{b}): {x} vs {y}"
                );
            }
            assert!((lim.fb - cf.fb).abs() < 1e-9 * (1.0 + cf.fb.abs()));
        }
    }

    #[test]
    fn horizon_zero_is_rejected() {
        assert!(series_partial_and_limit(SeriesId::MuLag, pair(0.5, 0.5), 0).is_err());
    }
}
