//! EMA weights and the closed-form constants against brute-force partial sums.

use batchbias::coeffs::{c_total, constants, constants_from_series, ema_weights, mu_nu, BetaPair};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn bias_corrected_weights_sum_to_one(beta in 0.0f64..0.999, t in 0usize..200) {
        let s: f64 = ema_weights(beta, t).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weights_match_the_unrolled_recursion(b1 in 0.0f64..0.99, b2 in 0.0f64..0.99, t in 0usize..40) {
        let betas = BetaPair::new(b1, b2).unwrap();
        // Feed a unit impulse at step k through the raw EMA and bias-correct at t.
        for k in 0..=t {
            let (mut m, mut v) = (0.0, 0.0);
            for s in 0..=t {
                let x = if s == k { 1.0 } else { 0.0 };
                m = b1 * m + (1.0 - b1) * x;
                v = b2 * v + (1.0 - b2) * x;
            }
            let (mu, nu) = mu_nu(t, k, betas).unwrap();
            prop_assert!((mu - m / (1.0 - b1.powi(t as i32 + 1))).abs() < 1e-12);
            prop_assert!((nu - v / (1.0 - b2.powi(t as i32 + 1))).abs() < 1e-12);
        }
        prop_assert!(mu_nu(t, t + 1, betas).is_err());
    }

    #[test]
    fn constants_are_the_limits_of_their_partial_sums(b1 in 0.05f64..0.8, b2 in 0.05f64..0.8) {
        let betas = BetaPair::new(b1, b2).unwrap();
        let closed = constants(betas).unwrap();
        let partial = constants_from_series(betas, 400).unwrap();
        for (a, b) in closed.as_array().iter().zip(partial.as_array()) {
            prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
        }
        prop_assert!((closed.fb - partial.fb).abs() <= 1e-8 * closed.fb.abs().max(1.0));
    }

    #[test]
    fn total_constant_is_affine_in_lambda(b1 in 0.0f64..0.999, b2 in 0.0f64..0.999, l1 in 0.0f64..10.0, l2 in 0.0f64..10.0) {
        let betas = BetaPair::new(b1, b2).unwrap();
        let c = constants(betas).unwrap();
        let mid = c_total(betas, 0.5 * (l1 + l2)).unwrap();
        let ends = 0.5 * (c_total(betas, l1).unwrap() + c_total(betas, l2).unwrap());
        prop_assert!((mid - ends).abs() <= 1e-9 * mid.abs().max(1.0));
        prop_assert_eq!(c_total(betas, 0.0).unwrap(), c.fb);
    }

    #[test]
    fn equal_betas_cancel_the_full_batch_bias(beta in 0.0f64..0.999) {
        prop_assert!(constants(BetaPair::new(beta, beta).unwrap()).unwrap().fb.abs() < 1e-12);
    }
}

#[test]
fn negative_lambda_and_unit_betas_are_rejected() {
    let betas = BetaPair::new(0.9, 0.999).unwrap();
    assert!(c_total(betas, -1.0).is_err());
    assert!(BetaPair::new(1.0, 0.5).is_err());
    assert!(BetaPair::new(0.5, -0.1).is_err());
}
