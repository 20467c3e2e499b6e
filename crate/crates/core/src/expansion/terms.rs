//! Degree-0/1/2 components of the correction's building blocks.
//!
//! Throughout, `j` is the output coordinate, `a = |g_j|`, `s = sign g_j`,
//! `G = ∇_j ‖g‖₁ = Σ_i s_i g_ij`, and every `(1 + o_ε(1))` factor is taken as
//! one. Degree-two terms are listed in the order of the corresponding
//! displays. Degree-one components of `L/R` and `MP/R³` are the cross
//! products of the factor expansions.

use super::algebra::NoiseAlgebra;
use super::weights::{ExpansionWeights, Outer};
use super::Components;
use crate::{Matrix, Vector};

pub(crate) struct Expander<'a, A: NoiseAlgebra> {
    h: &'a Matrix,
    g: &'a Vector,
    s: Vector,
    abs: Vector,
    grad_l1: Vector,
    w: &'a ExpansionWeights,
    alg: &'a A,
    /// `3ν_{n,k}² − ν_{n,k}`.
    nu_sq: Vec<f64>,
    /// `4ν_{n,k}² − ν_{n,k} − 2μ_{n,k}ν_{n,k}`.
    mr2_sq: Vec<f64>,
    /// `μ_{n,k} − 2ν_{n,k}`.
    mu_2nu: Vec<f64>,
}

impl<'a, A: NoiseAlgebra> Expander<'a, A> {
    pub fn new(g: &'a Vector, h: &'a Matrix, w: &'a ExpansionWeights, alg: &'a A) -> Self {
        let s = g.map(crate::problem::sign);
        let abs = g.abs();
        let grad_l1 = h.transpose() * &s;
        let (mu, nu) = (&w.mu_n, &w.nu_n);
        let nu_sq = nu.iter().map(|v| 3.0 * v * v - v).collect();
        let mr2_sq = mu
            .iter()
            .zip(nu)
            .map(|(m, v)| 4.0 * v * v - v - 2.0 * m * v)
            .collect();
        let mu_2nu = mu.iter().zip(nu).map(|(m, v)| m - 2.0 * v).collect();
        Self {
            h,
            g,
            s,
            abs,
            grad_l1,
            w,
            alg,
            nu_sq,
            mr2_sq,
            mu_2nu,
        }
    }

    fn dim(&self) -> usize {
        self.g.len()
    }

    fn terms(&self) -> usize {
        self.w.n + 1
    }

    // Degree-one blocks.

    /// `Σ_k w_k d_{k,j}`.
    fn lin_j(&self, w: &[f64], j: usize) -> f64 {
        w.iter()
            .enumerate()
            .map(|(k, wk)| wk * self.alg.grad(k, j))
            .sum()
    }

    /// `Σ_i (g_ij/|g_i|) Σ_p W1[p] d_{p,i}`.
    fn lin_grad_i(&self, o: Outer, j: usize) -> f64 {
        let w1 = &self.w.outer(o).w1;
        (0..self.dim())
            .map(|i| self.h[(i, j)] / self.abs[i] * self.lin_j(w1, i))
            .sum()
    }

    /// `Σ_i s_i Σ_k a_k (n−k) d_{k,ij}`.
    fn lin_hess(&self, o: Outer, j: usize) -> f64 {
        let lagv = &self.w.outer(o).lagv;
        (0..self.dim())
            .map(|i| {
                self.s[i]
                    * lagv
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * self.alg.hess(k, i, j))
                        .sum::<f64>()
            })
            .sum()
    }

    // Degree-two blocks in coordinate j only.

    /// `Σ_k w_k d_{k,j}²`.
    fn diag_j(&self, w: &[f64], j: usize) -> f64 {
        w.iter()
            .enumerate()
            .map(|(k, wk)| wk * self.alg.grad_grad(k, j, k, j))
            .sum()
    }

    /// `Σ_{p<q} f(p,q) d_{p,j} d_{q,j}`.
    fn pairs_j(&self, f: impl Fn(usize, usize) -> f64, j: usize) -> f64 {
        let mut acc = 0.0;
        for q in 0..self.terms() {
            for p in 0..q {
                acc += f(p, q) * self.alg.grad_grad(p, j, q, j);
            }
        }
        acc
    }

    /// `Σ_{k,r} a_k c_r d_{k,j} d_{r,j}`.
    fn outer_j(&self, a: &[f64], c: &[f64], j: usize) -> f64 {
        let mut acc = 0.0;
        for (k, ak) in a.iter().enumerate() {
            for (r, cr) in c.iter().enumerate() {
                acc += ak * cr * self.alg.grad_grad(k, j, r, j);
            }
        }
        acc
    }

    // Degree-two blocks mixing coordinates.

    /// `Σ_i (g_ij s_i/g_i²) · ½ Σ_p Wsq[p] d_{p,i}²`.
    fn sq_i(&self, o: Outer, j: usize) -> f64 {
        let wsq = &self.w.outer(o).wsq;
        (0..self.dim())
            .map(|i| {
                self.h[(i, j)] * self.s[i] / (self.g[i] * self.g[i]) * 0.5 * self.diag_j(wsq, i)
            })
            .sum()
    }

    /// `Σ_i (g_ij s_i/g_i²) Σ_{p<q} Wx[p][q] d_{p,i} d_{q,i}`.
    fn cross_i(&self, o: Outer, j: usize) -> f64 {
        let wx = &self.w.outer(o).wx;
        (0..self.dim())
            .map(|i| {
                self.h[(i, j)] * self.s[i] / (self.g[i] * self.g[i])
                    * self.pairs_j(|p, q| wx[p][q], i)
            })
            .sum()
    }

    /// `Σ_i (1/|g_i|) Σ_{k,p} Wh[k][p] d_{k,ij} d_{p,i}`.
    fn hess_grad_i(&self, o: Outer, j: usize) -> f64 {
        let wh = &self.w.outer(o).wh;
        let mut acc = 0.0;
        for i in 0..self.dim() {
            let mut inner = 0.0;
            for (k, row) in wh.iter().enumerate() {
                for (p, c) in row.iter().enumerate() {
                    inner += c * self.alg.hess_grad(k, i, j, p, i);
                }
            }
            acc += inner / self.abs[i];
        }
        acc
    }

    /// `Σ_i (g_ij/|g_i|) Σ_{p,r} W1[p] c_r d_{p,i} d_{r,j}`.
    fn grad_i_grad_j(&self, o: Outer, c: &[f64], j: usize) -> f64 {
        let w1 = &self.w.outer(o).w1;
        (0..self.dim())
            .map(|i| {
                let mut inner = 0.0;
                for (p, wp) in w1.iter().enumerate() {
                    for (r, cr) in c.iter().enumerate() {
                        inner += wp * cr * self.alg.grad_grad(p, i, r, j);
                    }
                }
                self.h[(i, j)] / self.abs[i] * inner
            })
            .sum()
    }

    /// `Σ_i s_i Σ_{k,r} a_k (n−k) c_r d_{k,ij} d_{r,j}`.
    fn hess_grad_j(&self, o: Outer, c: &[f64], j: usize) -> f64 {
        let lagv = &self.w.outer(o).lagv;
        (0..self.dim())
            .map(|i| {
                let mut inner = 0.0;
                for (k, lk) in lagv.iter().enumerate() {
                    for (r, cr) in c.iter().enumerate() {
                        inner += lk * cr * self.alg.hess_grad(k, i, j, r, j);
                    }
                }
                self.s[i] * inner
            })
            .sum()
    }

    /// `Σ_i (g_ij/|g_i|) Σ_{k,p} Wh[k][p] d_{k,j} d_{p,i}`.
    fn wh_grad_j(&self, o: Outer, j: usize) -> f64 {
        let wh = &self.w.outer(o).wh;
        (0..self.dim())
            .map(|i| {
                let mut inner = 0.0;
                for (k, row) in wh.iter().enumerate() {
                    for (p, c) in row.iter().enumerate() {
                        inner += c * self.alg.grad_grad(k, j, p, i);
                    }
                }
                self.h[(i, j)] / self.abs[i] * inner
            })
            .sum()
    }

    /// `Σ_i s_i Σ_k a_k (n−k) d_{k,j} d_{k,ij}`.
    fn same_hess_grad_j(&self, o: Outer, j: usize) -> f64 {
        let lagv = &self.w.outer(o).lagv;
        (0..self.dim())
            .map(|i| {
                self.s[i]
                    * lagv
                        .iter()
                        .enumerate()
                        .map(|(k, c)| c * self.alg.hess_grad(k, i, j, k, j))
                        .sum::<f64>()
            })
            .sum()
    }

    fn nu_pair3(&self) -> impl Fn(usize, usize) -> f64 + '_ {
        let nu = &self.w.nu_n;
        move |p, q| 3.0 * nu[p] * nu[q]
    }

    // Quantities.

    pub fn rinv(&self, j: usize) -> Components {
        let (a, s) = (self.abs[j], self.s[j]);
        let c2 = self.diag_j(&self.nu_sq, j) / (2.0 * a.powi(3))
            + self.pairs_j(self.nu_pair3(), j) / a.powi(3);
        Components::plain(1.0 / a, -s / (a * a) * self.lin_j(&self.w.nu_n, j), c2)
    }

    pub fn m(&self, j: usize) -> Components {
        Components::plain(self.g[j], self.lin_j(&self.w.mu_n, j), 0.0)
    }

    pub fn m_rinv2(&self, j: usize) -> Components {
        let (a, s) = (self.abs[j], self.s[j]);
        let (mu, nu) = (&self.w.mu_n, &self.w.nu_n);
        let pair = |p: usize, q: usize| 2.0 * (4.0 * nu[p] * nu[q] - mu[p] * nu[q] - mu[q] * nu[p]);
        let c2 = s / a.powi(3) * (self.diag_j(&self.mr2_sq, j) + self.pairs_j(pair, j));
        Components::plain(s / a, self.lin_j(&self.mu_2nu, j) / (a * a), c2)
    }

    pub fn l(&self, j: usize) -> Components {
        let o = Outer::Mu;
        let c0 = self.grad_l1[j] * self.w.mu_outer.lag;
        let c1 = self.lin_grad_i(o, j) + self.lin_hess(o, j);
        let c2 = self.sq_i(o, j) + self.hess_grad_i(o, j) + self.cross_i(o, j);
        Components::plain(c0, c1, c2)
    }

    pub fn p(&self, j: usize) -> Components {
        let o = Outer::Nu;
        let (gj, gl1) = (self.g[j], self.grad_l1[j]);
        let sums = &self.w.nu_outer;
        let c0 = gj * gl1 * sums.lag;
        let c1 =
            gj * self.lin_grad_i(o, j) + gj * self.lin_hess(o, j) + gl1 * self.lin_j(&sums.lagv, j);
        let c2 = gj * (self.sq_i(o, j) + self.cross_i(o, j) + self.hess_grad_i(o, j))
            + self.wh_grad_j(o, j)
            + self.same_hess_grad_j(o, j);
        Components::plain(c0, c1, c2)
    }

    pub fn p_rinv(&self, j: usize) -> Components {
        let o = Outer::Nu;
        let (a, s, gl1) = (self.abs[j], self.s[j], self.grad_l1[j]);
        let sums = &self.w.nu_outer;
        let nu = &self.w.nu_n;
        let c0 = s * gl1 * sums.lag;
        let c1 = s * self.lin_grad_i(o, j)
            + s * self.lin_hess(o, j)
            + gl1 / a * self.lin_j(&sums.lagv, j)
            - gl1 / a * sums.lag * self.lin_j(nu, j);
        let c2 = s * gl1 / (2.0 * a * a) * sums.lag * self.diag_j(&self.nu_sq, j)
            + s * gl1 / (a * a) * sums.lag * self.pairs_j(self.nu_pair3(), j)
            - self.grad_i_grad_j(o, nu, j) / a
            - self.hess_grad_j(o, nu, j) / a
            - s * gl1 / (a * a) * self.outer_j(&sums.lagv, nu, j)
            + s * self.sq_i(o, j)
            + s * self.cross_i(o, j)
            + s * self.hess_grad_i(o, j)
            + self.wh_grad_j(o, j) / a
            + self.same_hess_grad_j(o, j) / a;
        Components::plain(c0, c1, c2)
    }

    /// `L/R`; degree-two groups follow the MBN1..MBN5 shapes.
    pub fn l_over_r(&self, j: usize) -> Components {
        let o = Outer::Mu;
        let (a, s, gl1) = (self.abs[j], self.s[j], self.grad_l1[j]);
        let lag = self.w.mu_outer.lag;
        let nu = &self.w.nu_n;
        let c0 = gl1 / a * lag;
        // L₁/|g_j| + L₀ · (R⁻¹)₁
        let c1 = (self.lin_grad_i(o, j) + self.lin_hess(o, j)) / a
            - gl1 * lag * s / (a * a) * self.lin_j(nu, j);
        let t1 = self.sq_i(o, j) / a;
        let t2 = self.hess_grad_i(o, j) / a;
        let t3 = self.cross_i(o, j) / a;
        let t4 = -s / (a * a) * self.grad_i_grad_j(o, nu, j);
        let t5 = -s / (a * a) * self.hess_grad_j(o, nu, j);
        let t6 = gl1 / (2.0 * a.powi(3)) * lag * self.diag_j(&self.nu_sq, j);
        let t7 = gl1 / a.powi(3) * lag * self.pairs_j(self.nu_pair3(), j);
        Components::grouped(c0, c1, [t6 + t7, t1 + t3, t5, t2, t4])
    }

    /// `M P / R³`; degree-two groups follow the MBN1..MBN5 shapes.
    pub fn mp_over_r3(&self, j: usize) -> Components {
        let o = Outer::Nu;
        let (a, s, gl1) = (self.abs[j], self.s[j], self.grad_l1[j]);
        let sums = &self.w.nu_outer;
        let lag = sums.lag;
        let (mu, nu) = (&self.w.mu_n, &self.w.nu_n);
        let a3 = a.powi(3);
        let c0 = gl1 / a * lag;
        // (P R⁻¹)₁ (M R⁻²)₀ + (P R⁻¹)₀ (M R⁻²)₁
        let c1 = self.p_rinv(j).c1 * s / a + s * gl1 * lag * self.lin_j(&self.mu_2nu, j) / (a * a);
        let pair2 =
            |p: usize, q: usize| 2.0 * (4.0 * nu[p] * nu[q] - mu[p] * nu[q] - mu[q] * nu[p]);
        let t1 = gl1 / a3 * lag * self.diag_j(&self.mr2_sq, j);
        let t2 = gl1 / a3 * lag * self.pairs_j(pair2, j);
        let t3 = s / (a * a) * self.grad_i_grad_j(o, &self.mu_2nu, j);
        let t4 = s / (a * a) * self.hess_grad_j(o, &self.mu_2nu, j);
        let t5 = gl1 / a3 * self.outer_j(&sums.lagv, &self.mu_2nu, j);
        let t6 = -gl1 / a3 * lag * self.outer_j(nu, &self.mu_2nu, j);
        let t7 = gl1 / (2.0 * a3) * lag * self.diag_j(&self.nu_sq, j);
        let t8 = gl1 / a3 * lag * self.pairs_j(self.nu_pair3(), j);
        let t9 = -s / (a * a) * self.grad_i_grad_j(o, nu, j);
        let t10 = -s / (a * a) * self.hess_grad_j(o, nu, j);
        let t11 = -gl1 / a3 * self.outer_j(&sums.lagv, nu, j);
        let t12 = self.sq_i(o, j) / a;
        let t13 = self.cross_i(o, j) / a;
        let t14 = self.hess_grad_i(o, j) / a;
        let t15 = s / (a * a) * self.wh_grad_j(o, j);
        let t16 = s / (a * a) * self.same_hess_grad_j(o, j);
        Components::grouped(
            c0,
            c1,
            [
                t1 + t2 + t5 + t6 + t7 + t8 + t11,
                t12 + t13,
                t4 + t10 + t16,
                t14,
                t3 + t9 + t15,
            ],
        )
    }
}
