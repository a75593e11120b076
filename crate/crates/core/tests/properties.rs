//! Property tests for the spec-level invariants that hold over whole input
//! families rather than single examples.

mod common;

use aad_core::decision::{pearson, significance_threshold};
use aad_core::decoder::build_lag_matrix;
use aad_core::envelope::powerlaw_envelope;
use aad_core::signal::{resample_rational, zscore_per_trial, MultichannelSignal};
use ndarray::Array2;
use proptest::prelude::*;

fn finite_samples(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-100.0..100.0f64, n..=n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zscore_is_scale_and_offset_invariant(
        x in finite_samples(48),
        a in prop_oneof![(-50.0..-0.01f64), (0.01..50.0f64)],
        b in -100.0..100.0f64,
    ) {
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - x.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let base = MultichannelSignal::single_channel(x.clone(), 10.0).unwrap();
        let mapped = MultichannelSignal::single_channel(
            x.iter().map(|v| a * v + b).collect(),
            10.0,
        )
        .unwrap();
        let z_base = zscore_per_trial(&base).unwrap();
        let z_mapped = zscore_per_trial(&mapped).unwrap();
        let sign = a.signum();
        for (u, v) in z_base.channel(0).iter().zip(z_mapped.channel(0).iter()) {
            prop_assert!((sign * u - v).abs() <= 1e-10, "{u} vs {v}");
        }
    }

    #[test]
    fn resample_preserves_duration_within_one_sample(
        n in 64usize..2048,
        up in 1usize..6,
        down in 1usize..6,
    ) {
        let x: Vec<f64> = (0..n).map(|t| (t as f64 * 0.01).sin()).collect();
        let s = MultichannelSignal::single_channel(x, 64.0).unwrap();
        let y = resample_rational(&s, up, down).unwrap();
        // length contract: ceil(n*up/down), invariant under gcd reduction
        let g = num_integer::gcd(up, down);
        let expected_len = (n * (up / g)).div_ceil(down / g);
        prop_assert_eq!(y.n_samples(), expected_len);
        prop_assert!((y.duration_s() - s.duration_s()).abs() <= 1.0 / y.fs());
    }

    #[test]
    fn pearson_is_bounded(
        x in finite_samples(32),
        y in finite_samples(32),
    ) {
        let vx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - x.iter().cloned().fold(f64::INFINITY, f64::min);
        let vy = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - y.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(vx > 1e-6 && vy > 1e-6);
        let rho = pearson(&x, &y).unwrap();
        prop_assert!(rho.abs() <= 1.0 + 1e-12);
    }

    #[test]
    fn powerlaw_is_positively_homogeneous(
        x in finite_samples(40),
        scale in 0.01..20.0f64,
        exponent in 0.1..2.0f64,
    ) {
        let base = MultichannelSignal::single_channel(x.clone(), 10.0).unwrap();
        let scaled = MultichannelSignal::single_channel(
            x.iter().map(|v| scale * v).collect(),
            10.0,
        )
        .unwrap();
        let base_env = powerlaw_envelope(&base, exponent).unwrap();
        let scaled_env = powerlaw_envelope(&scaled, exponent).unwrap();
        let factor = scale.powf(exponent);
        for (u, v) in base_env.samples().iter().zip(scaled_env.samples()) {
            prop_assert!((factor * u - v).abs() <= 1e-10 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn lag_matrix_is_hankel_within_blocks(
        t in 4usize..24,
        c in 1usize..4,
        l in 2usize..4,
    ) {
        prop_assume!(l <= t);
        let arr = Array2::from_shape_fn((t, c), |(i, j)| ((i * 7 + j * 13) % 17) as f64 - 8.0);
        let eeg = MultichannelSignal::new(arr, 20.0).unwrap();
        let x = build_lag_matrix(&eeg, l).unwrap();
        let d = x.data();
        for ci in 0..c {
            for li in 0..l - 1 {
                for ti in 0..t - 1 {
                    prop_assert_eq!(d[(ti + 1, ci * l + li)], d[(ti, ci * l + li + 1)]);
                }
            }
        }
    }

    #[test]
    fn threshold_matches_oracle_and_stays_above_half(
        n in 1usize..400,
        alpha in prop_oneof![Just(0.05), Just(0.01), Just(0.1)],
    ) {
        let t = significance_threshold(n, alpha).unwrap();
        let oracle = common::significance_threshold_oracle(n, alpha);
        prop_assert_eq!(t, oracle);
        prop_assert!(t > 0.5 && t <= 1.0);
    }
}
