//! Property tests over random inputs.

use asymlab::attention::{self, init_params, softmax_variance, softmax_weights, AttentionParams};
use asymlab::linalg::{dot, Matrix};
use asymlab::multidim_attn::{attention_matrix, attn_grad_w};
use asymlab::ntk;
use asymlab::persist::{from_json_str, to_json_string};
use asymlab::ssm_data::{build_feature_bank, generate_id, generate_ood_sign_inconsistent, Dataset, FeatureMode};
use proptest::prelude::*;

fn finite_f64() -> impl Strategy<Value = f64> {
    use proptest::num::f64::*;
    NORMAL | SUBNORMAL | ZERO | POSITIVE | NEGATIVE
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn json_float_round_trip_is_bitwise(v in finite_f64()) {
        let back: f64 = from_json_str(&to_json_string(&v).unwrap()).unwrap();
        prop_assert_eq!(v.to_bits(), back.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        z in prop::collection::vec(-50.0..50.0f64, 1..12),
        c in -100.0..100.0f64,
    ) {
        let s = softmax_weights(&z).unwrap();
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let t = softmax_weights(&shifted).unwrap();
        prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in s.iter().zip(&t) {
            prop_assert!((0.0..=1.0).contains(a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_variance_is_nonnegative(
        z in prop::collection::vec(-20.0..20.0f64, 1..10),
        x in prop::collection::vec(-5.0..5.0f64, 10),
    ) {
        let s = softmax_weights(&z).unwrap();
        prop_assert!(softmax_variance(&s, &x[..s.len()]) >= 0.0);
    }

    #[test]
    fn paired_init_outputs_zero(m in 1usize..40, seed in any::<u64>(), x in prop::collection::vec(-5.0..5.0f64, 2..8)) {
        let p = init_params(2 * m, seed, true).unwrap();
        prop_assert_eq!(attention::forward(&p, &x), 0.0);
    }

    #[test]
    fn exact_norm_bank_geometry(d in 3usize..10, gamma in 0.0..0.99f64, seed in any::<u64>()) {
        let bank = build_feature_bank(d, gamma, FeatureMode::ExactNorm, seed).unwrap();
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot(bank.feature(i), bank.feature(j)) - expect).abs() < 1e-12);
            }
        }
        prop_assert!((dot(bank.target(), bank.target()) - 1.0).abs() < 1e-12);
        prop_assert!((dot(bank.core(), bank.target()) - gamma).abs() < 1e-12);
    }

    #[test]
    fn ood_samples_have_opposite_latent_signs(gamma in 0.0..0.95f64, seed in any::<u64>()) {
        let bank = build_feature_bank(5, gamma, FeatureMode::ExactNorm, seed).unwrap();
        let ds = generate_ood_sign_inconsistent(&bank, 20, 0.01, seed, 1_000_000).unwrap();
        for s in &ds.samples {
            let u = s.u.as_ref().unwrap();
            prop_assert!(u[4] * u[5] < 0.0);
        }
    }

    #[test]
    fn dataset_and_params_round_trip(seed in any::<u64>(), n in 1usize..10, m in 1usize..10) {
        let bank = build_feature_bank(4, 0.5, FeatureMode::ExactNorm, seed).unwrap();
        let ds = generate_id(&bank, n, 0.1, seed).unwrap();
        let back: Dataset = from_json_str(&to_json_string(&ds).unwrap()).unwrap();
        prop_assert_eq!(&back, &ds);
        let p = init_params(m, seed, false).unwrap();
        let q: AttentionParams = from_json_str(&to_json_string(&p).unwrap()).unwrap();
        prop_assert_eq!(q, p);
    }

    #[test]
    fn kernel_permutes_with_samples(seed in any::<u64>(), n in 2usize..8, rot in 1usize..7) {
        let bank = build_feature_bank(4, 0.5, FeatureMode::ExactNorm, seed).unwrap();
        let ds = generate_id(&bank, n, 0.1, seed).unwrap();
        let p = init_params(10, seed, false).unwrap();
        let mut rotated = ds.clone();
        rotated.samples.rotate_left(rot % n);
        let k = ntk::kernel(&p, &ds).unwrap();
        let kr = ntk::kernel(&p, &rotated).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(kr.h[(i, j)], k.h[((i + rot) % n, (j + rot) % n)]);
            }
        }
    }

    #[test]
    fn attention_rows_are_distributions(x in matrix(4, 3), w in matrix(3, 3)) {
        let s = attention_matrix(&x, &w).unwrap();
        for i in 0..4 {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn gradient_ignores_per_row_score_shifts(
        x in matrix(4, 3), w in matrix(3, 3), wv in matrix(3, 3), g in matrix(4, 3),
        c in -1.0..1.0f64, delta in -2.0..2.0f64, a in 0usize..3,
    ) {
        // make column 2 constant; moving W[a][2] then shifts row i's scores by
        // δ·c·X[i][a], uniformly across the row
        let mut x = x;
        for i in 0..4 {
            let mut row = x.row(i).to_vec();
            row[2] = c;
            x.row_mut(i).copy_from_slice(&row);
        }
        let mut w2 = w.clone();
        w2.row_mut(a)[2] += delta;
        let g1 = attn_grad_w(&x, &w, &wv, &g).unwrap();
        let g2 = attn_grad_w(&x, &w2, &wv, &g).unwrap();
        for (p, q) in g1.as_slice().iter().zip(g2.as_slice()) {
            prop_assert!((p - q).abs() < 1e-10);
        }
    }
}
