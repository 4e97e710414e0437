mod common;

use common::oracles::brute_gae;
use hoverlab::ppo::compute_gae;
use proptest::prelude::*;

fn instance(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>, f64, f64, f64)> {
    (
        proptest::collection::vec(-5.0f64..1.0, len),
        proptest::collection::vec(-10.0f64..10.0, len),
        proptest::collection::vec(proptest::bool::weighted(0.15), len),
        -10.0f64..10.0,
        0.5f64..=1.0,
        0.0f64..=1.0,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_quadratic_oracle((r, v, d, last, gamma, lambda) in instance(20)) {
        let (a, ret) = compute_gae(&r, &v, &d, last, gamma, lambda);
        let (ea, eret) = brute_gae(&r, &v, &d, last, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((a[t] - ea[t]).abs() <= 1e-12, "t={} {} vs {}", t, a[t], ea[t]);
            prop_assert!((ret[t] - eret[t]).abs() <= 1e-12);
        }
    }

    #[test]
    fn ten_step_sequences((r, v, d, last, gamma, lambda) in instance(10)) {
        let (a, _) = compute_gae(&r, &v, &d, last, gamma, lambda);
        let (ea, _) = brute_gae(&r, &v, &d, last, gamma, lambda);
        for t in 0..r.len() {
            prop_assert!((a[t] - ea[t]).abs() <= 1e-12);
        }
    }
}

#[test]
fn monte_carlo_limit() {
    let r = [1.0, -2.0, 0.5, 3.0];
    let (a, _) = compute_gae(&r, &[0.0; 4], &[false; 4], 0.0, 0.9, 1.0);
    for t in 0..4 {
        let expected: f64 = (t..4).map(|k| 0.9f64.powi((k - t) as i32) * r[k]).sum();
        assert!((a[t] - expected).abs() < 1e-12);
    }
}
