//! Independent re-implementations of the memoryless main and correction terms.

use batchbias::coeffs::ema_weight;
use batchbias::memoryless::{
    adam_correction_term, adam_main_term, closeness_scaling, generic_main_correction,
    run_memoryless, sgdm_main_correction, AdamMemory, SgdmMemory, FD_STEP,
};
use batchbias::optim::{batch_gradient, run_epoch, Algorithm, HyperParams};
use batchbias::problem::{
    scale_noise, PartitionSpec, PerSampleProblem, RandomPsdQuadratic, ShiftedQuadratic,
};
use batchbias::{Matrix, Vector};

fn batch_hess<P: PerSampleProblem>(p: &P, batch: &[usize], th: &Vector) -> Matrix {
    let d = th.len();
    let mut h = Matrix::zeros(d, d);
    for &s in batch {
        h += p.per_sample_hess(s, th);
    }
    h / batch.len() as f64
}

fn fixture() -> (RandomPsdQuadratic, PartitionSpec, Vector) {
    let q = RandomPsdQuadratic::random(8, 3, 21).unwrap();
    let part = PartitionSpec::new(4, 2, vec![5, 2, 7, 0, 1, 6, 3, 4]).unwrap();
    (q, part, Vector::from_vec(vec![1.5, -2.0, 0.8]))
}

#[test]
fn adam_main_term_matches_weighted_sums() {
    let q = RandomPsdQuadratic::random(3, 2, 4).unwrap();
    let part = PartitionSpec::new(3, 1, vec![2, 0, 1]).unwrap();
    let th = Vector::from_vec(vec![0.4, -1.1]);
    let hp = HyperParams::adam(0.1, 0.9, 0.99, 1e-8);
    let t = 2;
    let got = adam_main_term(&q, &part, &th, t, &hp).unwrap();
    for j in 0..2 {
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..=t {
            let mu = 0.9f64.powi((t - k) as i32) * 0.1 / (1.0 - 0.9f64.powi(3));
            let nu = 0.99f64.powi((t - k) as i32) * 0.01 / (1.0 - 0.99f64.powi(3));
            let g = batch_gradient(&q, part.batch(k), &th)[j];
            num += mu * g;
            den += nu * g * g;
        }
        assert!((got[j] - num / (den + 1e-8).sqrt()).abs() < 1e-13);
    }
}

#[test]
fn adam_correction_matches_literal_nested_sums() {
    let (q, part, th) = fixture();
    let hp = HyperParams::adam(0.05, 0.8, 0.95, 1e-6);
    let t = 3;
    let g: Vec<Vector> = (0..=t)
        .map(|k| batch_gradient(&q, part.batch(k), &th))
        .collect();
    let h: Vec<Matrix> = (0..=t)
        .map(|k| batch_hess(&q, part.batch(k), &th))
        .collect();
    let m = |l: usize, j: usize| {
        (0..=l)
            .map(|k| ema_weight(0.8, l, k) * g[k][j])
            .sum::<f64>()
    };
    let r = |l: usize, j: usize| {
        ((0..=l)
            .map(|k| ema_weight(0.95, l, k) * g[k][j].powi(2))
            .sum::<f64>()
            + 1e-6)
            .sqrt()
    };
    let got = adam_correction_term(&q, &part, &th, t, &hp).unwrap();
    for j in 0..3 {
        let (mut l_term, mut p_term) = (0.0, 0.0);
        for k in 0..t {
            let mut inner = 0.0;
            for i in 0..3 {
                let q_ki: f64 = (k..t).map(|l| m(l, i) / r(l, i)).sum();
                inner += h[k][(i, j)] * q_ki;
            }
            l_term += ema_weight(0.8, t, k) * inner;
            p_term += ema_weight(0.95, t, k) * g[k][j] * inner;
        }
        let want = l_term / r(t, j) - m(t, j) * p_term / r(t, j).powi(3);
        assert!(
            (got[j] - want).abs() < 1e-12 * (1.0 + want.abs()),
            "coord {j}: {} vs {want}",
            got[j]
        );
    }
}

#[test]
fn adam_correction_matches_hand_expansion_in_one_dimension() {
    let q = ShiftedQuadratic::from_centers(vec![
        Vector::from_element(1, 1.0),
        Vector::from_element(1, 4.0),
    ])
    .unwrap();
    let part = PartitionSpec::identity(2, 1).unwrap();
    let th = Vector::from_element(1, 0.0);
    let (b1, b2, eps) = (0.9, 0.99, 1e-8);
    let hp = HyperParams::adam(0.1, b1, b2, eps);
    // g0 = −1, g1 = −4, unit Hessians.
    let (g0, g1) = (-1.0, -4.0);
    let (mu10, mu11) = (
        b1 * (1.0 - b1) / (1.0 - b1 * b1),
        (1.0 - b1) / (1.0 - b1 * b1),
    );
    let (nu10, nu11) = (
        b2 * (1.0 - b2) / (1.0 - b2 * b2),
        (1.0 - b2) / (1.0 - b2 * b2),
    );
    let m1 = mu10 * g0 + mu11 * g1;
    let r1 = (nu10 * g0 * g0 + nu11 * g1 * g1 + eps).sqrt();
    let ratio0 = g0 / (g0 * g0 + eps).sqrt();
    let l1 = mu10 * ratio0;
    let p1 = nu10 * g0 * ratio0;
    let want = l1 / r1 - m1 * p1 / r1.powi(3);
    let got = adam_correction_term(&q, &part, &th, 1, &hp).unwrap()[0];
    assert!((got - want).abs() < 1e-14);
}

#[test]
fn sgdm_terms_match_literal_triple_sum() {
    let q = ShiftedQuadratic::from_centers(
        [1.0, 2.0, 3.0, 6.0]
            .iter()
            .map(|&a| Vector::from_element(1, a))
            .collect(),
    )
    .unwrap();
    let part = PartitionSpec::new(4, 1, vec![2, 0, 3, 1]).unwrap();
    let th = Vector::from_element(1, 0.5);
    let beta: f64 = 0.5;
    let hp = HyperParams::sgdm(0.1, beta);
    let t = 2;
    let g: Vec<f64> = (0..=t)
        .map(|k| batch_gradient(&q, part.batch(k), &th)[0])
        .collect();
    let h = 1.0;
    let main: f64 = (0..=t).map(|k| beta.powi((t - k) as i32) * g[k]).sum();
    let mut corr = 0.0;
    for b in 0..t {
        for lp in 1..=b + 1 {
            for bp in 0..=t - lp {
                corr += beta * beta.powi(b as i32) * beta.powi(bp as i32) * h * g[t - lp - bp];
            }
        }
    }
    let (m, c) = sgdm_main_correction(&q, &part, &th, t, &hp).unwrap();
    assert!((m[0] - main).abs() < 1e-14);
    assert!((c[0] - corr).abs() < 1e-14);
    let (_, c0) = sgdm_main_correction(&q, &part, &th, 0, &hp).unwrap();
    assert_eq!(c0[0], 0.0);
}

#[test]
fn analytic_terms_match_finite_difference_memory_removal() {
    let (q, part, th) = fixture();
    let hp = HyperParams {
        eta: 0.01,
        beta1: 0.85,
        beta2: 0.9,
        eps: 1e-6,
        beta: 0.7,
    };
    for t in 0..4 {
        let adam = AdamMemory {
            problem: &q,
            partition: &part,
            hp,
        };
        let (gm, gc) = generic_main_correction(&adam, &th, t, FD_STEP).unwrap();
        let am = adam_main_term(&q, &part, &th, t, &hp).unwrap();
        let ac = adam_correction_term(&q, &part, &th, t, &hp).unwrap();
        assert!((gm - am).amax() < 1e-12);
        assert!(
            (&gc - &ac).amax() <= 1e-6 * (1.0 + ac.amax()),
            "Adam t={t}: {gc} vs {ac}"
        );

        let sgdm = SgdmMemory {
            problem: &q,
            partition: &part,
            hp,
        };
        let (gm, gc) = generic_main_correction(&sgdm, &th, t, FD_STEP).unwrap();
        let (sm, sc) = sgdm_main_correction(&q, &part, &th, t, &hp).unwrap();
        assert!((gm - sm).amax() < 1e-12);
        assert!((&gc - &sc).amax() <= 1e-6 * (1.0 + sc.amax()), "SGDM t={t}");
    }
}

#[test]
fn noiseless_main_terms_coincide_with_full_batch() {
    let (q, part, th) = fixture();
    let z = scale_noise(&q, 0.0).unwrap();
    let hp = HyperParams::adam(0.1, 0.9, 0.99, 1e-8);
    let whole = PartitionSpec::identity(1, 8).unwrap();
    for t in 0..4 {
        let f = adam_main_term(&z, &part, &th, t, &hp).unwrap();
        let full = adam_main_term(&q, &whole, &th, 0, &hp).unwrap();
        assert!((f - full).amax() < 1e-12);
    }
}

#[test]
fn zero_betas_make_both_iterations_identical() {
    let (q, part, th) = fixture();
    let hp = HyperParams {
        eta: 0.05,
        beta1: 0.0,
        beta2: 0.0,
        eps: 1e-8,
        beta: 0.0,
    };
    for algo in [Algorithm::Adam, Algorithm::Sgdm] {
        let a = run_epoch(&q, &part, &hp, &th, algo, 4).unwrap();
        let b = run_memoryless(&q, &part, &hp, &th, algo, 4).unwrap();
        for (x, y) in a.points.iter().zip(&b.points) {
            assert!((x - y).amax() < 1e-12);
        }
        let report =
            closeness_scaling(&q, &part, &hp, &th, algo, &[0.1, 0.05, 0.025], 0.3).unwrap();
        assert!(report.max_errors().iter().all(|e| *e < 1e-12));
    }
}

#[test]
fn frozen_step_size_keeps_both_iterations_constant() {
    let (q, part, th) = fixture();
    let hp = HyperParams::adam(0.0, 0.9, 0.99, 1e-8);
    let traj = run_memoryless(&q, &part, &hp, &th, Algorithm::Adam, 4).unwrap();
    assert!(traj.points.iter().all(|p| *p == th));
}
