//! Collapsed weight sums that appear in the noise expansions at horizon `n`.
//!
//! Every nested sum `Σ_{l<n} Σ_{k,p≤l} a_k w(l,p) x_p` with an outer weight
//! `a` (either `μ_{n,·}` or `ν_{n,·}`) is folded into a single weight per noise
//! index, so evaluating a term costs one pass over the batches.

use crate::coeffs::ema_weight;

/// Which EMA supplies the outer weight `a_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outer {
    Mu,
    Nu,
}

/// Folded sums for one outer weight.
#[derive(Debug, Clone)]
pub(crate) struct OuterSums {
    /// `Σ_{k<n} a_k (n − k)`.
    pub lag: f64,
    /// `a_k (n − k)`.
    pub lagv: Vec<f64>,
    /// `W1[p] = Σ_{l=p}^{n−1} A_l (μ_{l,p} − ν_{l,p})` with `A_l = Σ_{k≤l} a_k`.
    pub w1: Vec<f64>,
    /// `Wsq[p] = Σ_{l=p}^{n−1} A_l (3ν_{l,p}² − ν_{l,p} − 2μ_{l,p}ν_{l,p})`.
    pub wsq: Vec<f64>,
    /// `Wx[p][q] = Σ_{l=q}^{n−1} A_l (3ν_{l,p}ν_{l,q} − μ_{l,p}ν_{l,q} − μ_{l,q}ν_{l,p})`, `p < q`.
    pub wx: Vec<Vec<f64>>,
    /// `Wh[k][p] = a_k Σ_{l=max(k,p)}^{n−1} (μ_{l,p} − ν_{l,p})`.
    pub wh: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct ExpansionWeights {
    pub n: usize,
    /// `μ_{n,k}`, `k = 0..=n`.
    pub mu_n: Vec<f64>,
    /// `ν_{n,k}`, `k = 0..=n`.
    pub nu_n: Vec<f64>,
    pub mu_outer: OuterSums,
    pub nu_outer: OuterSums,
}

impl ExpansionWeights {
    pub fn new(beta1: f64, beta2: f64, n: usize) -> Self {
        // mu[l][p] = μ_{l,p} for p ≤ l ≤ n.
        let table = |beta: f64| -> Vec<Vec<f64>> {
            (0..=n)
                .map(|l| (0..=l).map(|p| ema_weight(beta, l, p)).collect())
                .collect()
        };
        let mu = table(beta1);
        let nu = table(beta2);
        let mu_outer = Self::outer_sums(&mu, &nu, &mu[n], n);
        let nu_outer = Self::outer_sums(&mu, &nu, &nu[n], n);
        Self {
            n,
            mu_n: mu[n].clone(),
            nu_n: nu[n].clone(),
            mu_outer,
            nu_outer,
        }
    }

    fn outer_sums(mu: &[Vec<f64>], nu: &[Vec<f64>], a: &[f64], n: usize) -> OuterSums {
        let mut cum = vec![0.0; n + 1];
        let mut acc = 0.0;
        for l in 0..=n {
            acc += a[l];
            cum[l] = acc;
        }
        let lagv: Vec<f64> = (0..=n).map(|k| a[k] * (n - k) as f64).collect();
        let lag = lagv.iter().sum();
        let mut w1 = vec![0.0; n + 1];
        let mut wsq = vec![0.0; n + 1];
        let mut wx = vec![vec![0.0; n + 1]; n + 1];
        for p in 0..n {
            for l in p..n {
                let (m, v) = (mu[l][p], nu[l][p]);
                w1[p] += cum[l] * (m - v);
                wsq[p] += cum[l] * (3.0 * v * v - v - 2.0 * m * v);
            }
            for q in p + 1..n {
                for l in q..n {
                    let w = 3.0 * nu[l][p] * nu[l][q] - mu[l][p] * nu[l][q] - mu[l][q] * nu[l][p];
                    wx[p][q] += cum[l] * w;
                }
            }
        }
        let mut wh = vec![vec![0.0; n + 1]; n + 1];
        for k in 0..n {
            for p in 0..n {
                let tail: f64 = (k.max(p)..n).map(|l| mu[l][p] - nu[l][p]).sum();
                wh[k][p] = a[k] * tail;
            }
        }
        OuterSums {
            lag,
            lagv,
            w1,
            wsq,
            wx,
            wh,
        }
    }

    pub fn outer(&self, o: Outer) -> &OuterSums {
        match o {
            Outer::Mu => &self.mu_outer,
            Outer::Nu => &self.nu_outer,
        }
    }
}
