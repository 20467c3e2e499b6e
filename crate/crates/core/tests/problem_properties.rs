//! Derivative, partition and covariance invariants of the built-in families.

use batchbias::problem::{
    empirical_covariance, full_loss_grad, minibatch_noise, replicate, scale_noise, Logistic2D,
    PartitionSpec, PerSampleProblem, RandomPsdQuadratic, ShiftedQuadratic, TeacherStudentConfig,
    TeacherStudentMlp,
};
use batchbias::{Matrix, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn families(seed: u64) -> Vec<Box<dyn PerSampleProblem>> {
    let ts = TeacherStudentConfig {
        input_dim: 3,
        hidden: 4,
        n_train: 5,
        n_val: 1,
        label_noise: 0.2,
        data_seed: seed,
    };
    vec![
        Box::new(ShiftedQuadratic::random(5, 3, seed).unwrap()),
        Box::new(RandomPsdQuadratic::random(5, 3, seed).unwrap()),
        Box::new(Logistic2D::random(5, seed).unwrap()),
        Box::new(TeacherStudentMlp::generate(&ts).unwrap().0),
    ]
}

fn point(dim: usize, coords: &[f64]) -> Vector {
    Vector::from_fn(dim, |i, _| {
        coords[i % coords.len()] * (1.0 + 0.1 * i as f64)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn derivatives_match_central_differences(seed in 0u64..1000, coords in prop::collection::vec(-1.5f64..1.5, 4)) {
        for prob in families(seed) {
            let th = point(prob.dim(), &coords);
            for p in 0..prob.n_samples() {
                let g = prob.per_sample_grad(p, &th);
                let h = prob.per_sample_hess(p, &th);
                for i in 0..prob.dim() {
                    let mut e = Vector::zeros(prob.dim());
                    e[i] = H;
                    let fd = (prob.per_sample_value(p, &(&th + &e)) - prob.per_sample_value(p, &(&th - &e))) / (2.0 * H);
                    prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "{:?} grad {i}", prob.family_id());
                    let fdg = (prob.per_sample_grad(p, &(&th + &e)) - prob.per_sample_grad(p, &(&th - &e))) / (2.0 * H);
                    for j in 0..prob.dim() {
                        prop_assert!((fdg[j] - h[(j, i)]).abs() <= 1e-6 * h[(j, i)].abs().max(1.0));
                    }
                }
                prop_assert!((&h - h.transpose()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_losses_average_to_the_full_loss(seed in 0u64..1000, perm_seed in 0u64..1000, x in -3.0f64..3.0) {
        let q = RandomPsdQuadratic::random(12, 3, seed).unwrap();
        let th = Vector::from_vec(vec![x, 1.0 - x, 0.5]);
        let full = full_loss_grad(&q, &th).unwrap().value;
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for (m, b) in [(3, 4), (4, 3), (6, 2), (12, 1)] {
            let part = PartitionSpec::random(m, b, &mut rng).unwrap();
            let avg = (0..m)
                .map(|k| part.batch(k).iter().map(|&p| q.per_sample_value(p, &th)).sum::<f64>() / b as f64)
                .sum::<f64>() / m as f64;
            prop_assert!((avg - full).abs() <= 1e-12 * full.abs().max(1.0));
        }
    }

    #[test]
    fn noise_tensors_sum_to_zero(seed in 0u64..1000, perm_seed in 0u64..1000) {
        let q = RandomPsdQuadratic::random(8, 2, seed).unwrap();
        let th = Vector::from_vec(vec![0.3, -1.2]);
        let part = PartitionSpec::random(4, 2, &mut ChaCha8Rng::seed_from_u64(perm_seed)).unwrap();
        let (mut d, mut di, mut dij) = (0.0, Vector::zeros(2), Matrix::zeros(2, 2));
        for k in 0..4 {
            let t = minibatch_noise(&q, &part, k, &th).unwrap();
            d += t.d;
            di += t.d_i;
            dij += t.d_ij;
        }
        prop_assert!(d.abs() < 1e-12 && di.amax() < 1e-12 && dij.amax() < 1e-12);
    }

    #[test]
    fn covariance_is_psd_and_scales_quadratically(seed in 0u64..1000, delta in 0.0f64..3.0) {
        for prob in families(seed) {
            let th = Vector::from_element(prob.dim(), 0.2);
            let s = empirical_covariance(&prob, &th).unwrap().sigma;
            prop_assert!((&s - s.transpose()).amax() < 1e-12);
            prop_assert!(s.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
            let scaled = empirical_covariance(&scale_noise(&prob, delta).unwrap(), &th).unwrap().sigma;
            prop_assert!((&scaled - &s * (delta * delta)).amax() <= 1e-10 * s.amax().max(1.0));
        }
    }

    #[test]
    fn noise_scaling_keeps_the_full_gradient(seed in 0u64..1000, delta in 0.0f64..3.0) {
        let q = RandomPsdQuadratic::random(6, 3, seed).unwrap();
        let th = Vector::from_vec(vec![1.0, 2.0, -0.5]);
        let a = full_loss_grad(&q, &th).unwrap();
        let b = full_loss_grad(&scale_noise(&q, delta).unwrap(), &th).unwrap();
        prop_assert!((a.grad - b.grad).amax() < 1e-12 * 10.0);
        prop_assert!((a.hess - b.hess).amax() < 1e-12 * 10.0);
    }

    #[test]
    fn replication_keeps_full_batch_statistics(seed in 0u64..1000, copies in 1usize..5) {
        let q = RandomPsdQuadratic::random(4, 2, seed).unwrap();
        let th = Vector::from_vec(vec![-0.7, 0.4]);
        let r = replicate(&q, copies).unwrap();
        prop_assert_eq!(r.n_samples(), 4 * copies);
        let (a, b) = (empirical_covariance(&q, &th).unwrap(), empirical_covariance(&r, &th).unwrap());
        prop_assert!((a.sigma - b.sigma).amax() < 1e-12);
    }
}
