//! Adam and SGDM updates against a literal scalar re-implementation.

use approx::assert_relative_eq;
use batchbias::optim::{
    adam_step, run_epoch, run_epochs, sgdm_step, AdamState, Algorithm, HyperParams,
};
use batchbias::problem::{PartitionSpec, RandomPsdQuadratic};
use batchbias::Vector;
use proptest::prelude::*;

/// Scalar Adam over a gradient sequence, returning every increment.
fn adam_oracle(grads: &[f64], eta: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
    let (mut m, mut v) = (0.0, 0.0);
    grads
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(k as i32 + 1));
            let vh = v / (1.0 - b2.powi(k as i32 + 1));
            -eta * mh / (vh + eps).sqrt()
        })
        .collect()
}

proptest! {
    #[test]
    fn adam_matches_the_scalar_recursion(
        grads in prop::collection::vec(-5.0f64..5.0, 1..12),
        b1 in 0.0f64..0.99,
        b2 in 0.0f64..0.999,
        eta in 0.0f64..0.1,
    ) {
        let hp = HyperParams::adam(eta, b1, b2, 1e-8);
        let expect = adam_oracle(&grads, eta, b1, b2, 1e-8);
        let mut state = AdamState::new(1);
        for (g, e) in grads.iter().zip(expect) {
            let (next, delta) = adam_step(&state, &Vector::from_element(1, *g), &hp).unwrap();
            prop_assert!((delta[0] - e).abs() <= 1e-12 * e.abs().max(1e-3));
            state = next;
        }
        prop_assert_eq!(state.t, grads.len());
    }

    #[test]
    fn first_adam_step_is_a_sign_step(g in prop::collection::vec(-10.0f64..10.0, 1..6), eta in 1e-4f64..1.0) {
        prop_assume!(g.iter().all(|x| x.abs() > 1e-3));
        let hp = HyperParams::adam(eta, 0.9, 0.999, 0.0);
        let (_, delta) = adam_step(&AdamState::new(g.len()), &Vector::from_vec(g.clone()), &hp).unwrap();
        for (d, x) in delta.iter().zip(&g) {
            prop_assert!((d + eta * x.signum()).abs() < 1e-12);
        }
    }

    #[test]
    fn sgdm_matches_the_heavy_ball_recursion(grads in prop::collection::vec(-5.0f64..5.0, 1..12), beta in 0.0f64..0.99) {
        let hp = HyperParams::sgdm(0.05, beta);
        let mut vel = Vector::zeros(1);
        let mut oracle = 0.0;
        for g in &grads {
            oracle = beta * oracle + g;
            let (next, delta) = sgdm_step(&vel, &Vector::from_element(1, *g), &hp).unwrap();
            prop_assert!((delta[0] + 0.05 * oracle).abs() < 1e-12);
            vel = next;
        }
    }

    #[test]
    fn single_batch_epoch_ignores_the_permutation(seed in 0u64..500, perm_seed in 0u64..500) {
        let q = RandomPsdQuadratic::random(6, 2, seed).unwrap();
        let th = Vector::from_vec(vec![1.0, -1.0]);
        let hp = HyperParams::adam(0.01, 0.9, 0.999, 1e-8);
        let a = run_epoch(&q, &PartitionSpec::identity(1, 6).unwrap(), &hp, &th, Algorithm::Adam, 1).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(perm_seed);
        let part = PartitionSpec::random(1, 6, &mut rng).unwrap();
        let b = run_epoch(&q, &part, &hp, &th, Algorithm::Adam, 1).unwrap();
        prop_assert!((&a.points[1] - &b.points[1]).amax() < 1e-14);
    }
}

#[test]
fn zero_step_size_freezes_the_iterate() {
    let q = RandomPsdQuadratic::random(8, 3, 2).unwrap();
    let th = Vector::from_vec(vec![0.3, 0.1, -2.0]);
    for algo in [Algorithm::Adam, Algorithm::Sgdm] {
        let tr = run_epochs(
            &q,
            &HyperParams::adam(0.0, 0.9, 0.999, 1e-8),
            &th,
            algo,
            2,
            3,
            5,
        )
        .unwrap();
        assert!(tr.points.iter().all(|p| *p == th));
    }
}

#[test]
fn multi_epoch_runs_are_reproducible_and_seed_sensitive() {
    let q = RandomPsdQuadratic::random(8, 3, 2).unwrap();
    let th = Vector::from_vec(vec![0.3, 0.1, -2.0]);
    let hp = HyperParams::adam(0.05, 0.9, 0.999, 1e-8);
    let a = run_epochs(&q, &hp, &th, Algorithm::Adam, 2, 4, 11).unwrap();
    let b = run_epochs(&q, &hp, &th, Algorithm::Adam, 2, 4, 11).unwrap();
    let c = run_epochs(&q, &hp, &th, Algorithm::Adam, 2, 4, 12).unwrap();
    assert_eq!(a.points, b.points);
    assert_ne!(a.points, c.points);
    assert_eq!(a.points.len(), 5);
}

#[test]
fn full_batch_adam_descends_on_a_quadratic() {
    let q = RandomPsdQuadratic::random(8, 3, 4).unwrap();
    let star = q.minimizer().unwrap();
    let th = &star + Vector::from_element(3, 1.0);
    let tr = run_epochs(
        &q,
        &HyperParams::adam(0.01, 0.9, 0.999, 1e-8),
        &th,
        Algorithm::Adam,
        8,
        400,
        0,
    )
    .unwrap();
    let end = tr.points.last().unwrap();
    assert!((end - &star).norm() < 0.1 * (&th - &star).norm());
    assert_relative_eq!(tr.points[0][0], th[0]);
}
