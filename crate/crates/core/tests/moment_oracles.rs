//! Permutation expectations against a literal average over all `N!` orderings.

use approx::assert_abs_diff_eq;
use batchbias::memoryless::{adam_auxiliary, BatchDerivatives};
use batchbias::moments::{
    batch_assignments, bruteforce_expected_correction, closed_form_moment, exact_moment, mc_moment,
    Expectation, MomentSpec, NoiseFactor,
};
use batchbias::optim::HyperParams;
use batchbias::problem::{PartitionSpec, PerSampleProblem, RandomPsdQuadratic, SampleDerivatives};
use batchbias::Vector;
use proptest::prelude::*;

/// Every permutation of `0..n`, by Heap's algorithm.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            a.swap(j, k - 1);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// Batch-`k` mean of a per-sample feature minus its full mean.
fn noise_of(f: &NoiseFactor, s: &SampleDerivatives, part: &PartitionSpec) -> f64 {
    let feature = |p: usize| match *f {
        NoiseFactor::Value { .. } => s.values[p],
        NoiseFactor::Grad { i, .. } => s.grads[p][i],
        NoiseFactor::Hess { i, j, .. } => s.hessians[p][(i, j)],
    };
    let batch = part.batch(f.batch());
    let n = s.n_samples();
    batch.iter().map(|&p| feature(p)).sum::<f64>() / batch.len() as f64
        - (0..n).map(feature).sum::<f64>() / n as f64
}

fn over_all_permutations<P: PerSampleProblem>(
    q: &P,
    th: &Vector,
    m: usize,
    b: usize,
    spec: &[NoiseFactor],
) -> f64 {
    let s = SampleDerivatives::evaluate(q, th).unwrap();
    let perms = permutations(m * b);
    perms
        .iter()
        .map(|perm| {
            let part = PartitionSpec::new(m, b, perm.clone()).unwrap();
            spec.iter().map(|f| noise_of(f, &s, &part)).product::<f64>()
        })
        .sum::<f64>()
        / perms.len() as f64
}

fn layouts() -> Vec<(usize, usize)> {
    (2..=6)
        .flat_map(|n| (1..=n).filter(move |m| n % m == 0).map(move |m| (m, n / m)))
        .collect()
}

#[test]
fn heap_enumerates_every_permutation_once() {
    let mut all = permutations(5);
    assert_eq!(all.len(), 120);
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 120);
}

#[test]
fn assignment_enumeration_matches_the_full_permutation_average() {
    let th = Vector::from_vec(vec![0.5, -1.0]);
    for (m, b) in layouts() {
        let q = RandomPsdQuadratic::random(m * b, 2, (m * 10 + b) as u64).unwrap();
        let mut specs = vec![
            vec![
                NoiseFactor::Grad { batch: 0, i: 0 },
                NoiseFactor::Grad { batch: 0, i: 1 },
            ],
            vec![
                NoiseFactor::Hess {
                    batch: 0,
                    i: 0,
                    j: 1,
                },
                NoiseFactor::Grad { batch: 0, i: 1 },
            ],
            vec![
                NoiseFactor::Value { batch: 0 },
                NoiseFactor::Grad { batch: 0, i: 0 },
            ],
            vec![NoiseFactor::Grad { batch: m - 1, i: 1 }],
        ];
        if m >= 2 {
            specs.push(vec![
                NoiseFactor::Grad { batch: 0, i: 0 },
                NoiseFactor::Grad { batch: 1, i: 1 },
            ]);
            specs.push(vec![
                NoiseFactor::Hess {
                    batch: 1,
                    i: 1,
                    j: 1,
                },
                NoiseFactor::Grad { batch: 0, i: 0 },
            ]);
        }
        for factors in specs {
            let oracle = over_all_permutations(&q, &th, m, b, &factors);
            let spec = MomentSpec::new(factors).unwrap();
            let exact = exact_moment(&q, &th, m, b, &spec).unwrap();
            assert_abs_diff_eq!(exact.value, oracle, epsilon = 1e-12);
            let closed = closed_form_moment(&q, &th, m, b, &spec).unwrap();
            assert_abs_diff_eq!(closed.value, oracle, epsilon = 1e-12);
        }
    }
}

#[test]
fn every_assignment_has_equal_multiplicity() {
    for (m, b) in layouts() {
        let n = m * b;
        let fact = |k: usize| (1..=k).product::<usize>();
        let mut counts = std::collections::HashMap::new();
        for perm in permutations(n) {
            let mut key = Vec::new();
            for k in 0..m {
                let mut batch = perm[k * b..(k + 1) * b].to_vec();
                batch.sort_unstable();
                key.extend(batch);
            }
            *counts.entry(key).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), batch_assignments(m, b).len());
        assert!(counts.values().all(|c| *c == fact(b).pow(m as u32)));
    }
}

#[test]
fn expected_correction_matches_the_full_permutation_average() {
    let q = RandomPsdQuadratic::random(6, 2, 8).unwrap();
    let th = Vector::from_vec(vec![2.0, -1.5]);
    let hp = HyperParams::adam(0.0, 0.9, 0.99, 1e-8);
    let s = SampleDerivatives::evaluate(&q, &th).unwrap();
    for (m, b) in [(3, 2), (2, 3), (6, 1)] {
        let t = m - 1;
        let perms = permutations(6);
        let mut acc = Vector::zeros(2);
        for perm in &perms {
            let part = PartitionSpec::new(m, b, perm.clone()).unwrap();
            acc +=
                adam_auxiliary(&BatchDerivatives::from_samples(&s, &part, t), t, &hp).correction();
        }
        acc /= perms.len() as f64;
        let brute = bruteforce_expected_correction(&q, m, b, &th, &hp, Expectation::Exact).unwrap();
        assert!((brute - acc).amax() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn monte_carlo_brackets_the_exact_value(seed in 0u64..500, mc_seed in 0u64..500) {
        let q = RandomPsdQuadratic::random(8, 2, seed).unwrap();
        let th = Vector::from_vec(vec![1.0, 0.5]);
        let spec = MomentSpec::grad_grad(0, 0, 1, 1);
        let exact = exact_moment(&q, &th, 4, 2, &spec).unwrap().value;
        let mc = mc_moment(&q, &th, 4, 2, &spec, 4000, mc_seed).unwrap();
        prop_assert!((mc.value - exact).abs() <= 6.0 * mc.mc_stderr.unwrap() + 1e-12);
    }

    #[test]
    fn first_moments_vanish(seed in 0u64..500, i in 0usize..2, k in 0usize..4) {
        let q = RandomPsdQuadratic::random(8, 2, seed).unwrap();
        let th = Vector::from_vec(vec![-0.4, 0.9]);
        for f in [NoiseFactor::Grad { batch: k, i }, NoiseFactor::Hess { batch: k, i, j: 1 - i }, NoiseFactor::Value { batch: k }] {
            prop_assert!(exact_moment(&q, &th, 4, 2, &MomentSpec::single(f)).unwrap().value.abs() < 1e-12);
        }
    }
}
