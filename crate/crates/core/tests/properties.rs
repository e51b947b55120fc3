use num_bigint::BigUint;
use proptest::prelude::*;

use compattn::attention::{build_causal_mask, build_trapezoidal_mask, composite_attention_forward, AttentionWeights};
use compattn::costmodel::{flops_baseline_total, flops_ee_total, flops_ratio, CostConfig};
use compattn::layers::io::{read_features, read_weights, write_features, write_weights};
use compattn::layers::{aligner_forward, LayerWeights, Mode, Model, ModelConfig};
use compattn::reference::{naive_aligner, naive_composite_attention, naive_matmul};
use compattn::tensor::{approx_equal, matmul, matmul_seq, softmax_rows_masked, Matrix, Prng};

fn random(seed: u64, rows: usize, cols: usize) -> Matrix {
    Prng::new(seed).uniform_matrix(rows, cols, -1.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn matmul_is_bitwise_the_triple_loop(m in 0usize..21, n in 0usize..13, p in 0usize..27, seed in any::<u64>()) {
        let a = random(seed, m, n);
        let b = random(seed ^ 1, n, p);
        let fast = matmul(&a, &b).unwrap();
        prop_assert_eq!(&fast, &naive_matmul(&a, &b));
        prop_assert_eq!(&fast, &matmul_seq(&a, &b).unwrap());
    }

    #[test]
    fn matmul_is_associative_up_to_rounding(m in 1usize..9, n in 1usize..9, p in 1usize..9, q in 1usize..9, seed in any::<u64>()) {
        let (a, b, c) = (random(seed, m, n), random(seed ^ 2, n, p), random(seed ^ 3, p, q));
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(approx_equal(&left, &right, 1e-12).unwrap().1);
    }

    #[test]
    fn softmax_rows_are_distributions(k in 0usize..10, n in 1usize..10, seed in any::<u64>(), spread in 0.1f64..200.0) {
        let mask = build_trapezoidal_mask(k, n).unwrap();
        let scores = Prng::new(seed).uniform_matrix(n, k + n, -spread, spread);
        let p = softmax_rows_masked(&scores, &mask).unwrap();
        for i in 0..n {
            let row = p.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (j, &x) in row.iter().enumerate() {
                if mask.permits(i, j) {
                    prop_assert!(x >= 0.0);
                } else {
                    prop_assert_eq!(x, 0.0);
                }
            }
        }
    }

    #[test]
    fn softmax_ignores_huge_masked_scores(n in 1usize..8, seed in any::<u64>()) {
        let mask = build_causal_mask(n).unwrap();
        let base = random(seed, n, n);
        let poisoned = Matrix::from_fn(n, n, |i, j| if j > i { 1e308 } else { base.get(i, j) });
        prop_assert_eq!(softmax_rows_masked(&base, &mask).unwrap(), softmax_rows_masked(&poisoned, &mask).unwrap());
    }

    #[test]
    fn trapezoid_row_counts(k in 0usize..40, n in 1usize..40) {
        let mask = build_trapezoidal_mask(k, n).unwrap();
        prop_assert_eq!(mask.shape(), (n, k + n));
        for i in 0..n {
            prop_assert_eq!(mask.permitted_in_row(i), k + i + 1);
        }
    }

    #[test]
    fn composite_matches_naive_oracle(k in 0usize..10, n in 1usize..10, heads in 1usize..3, seed in any::<u64>()) {
        let h = 4 * heads;
        let mut rng = Prng::new(seed);
        let w = AttentionWeights::random(&mut rng, h, heads, 0.6).unwrap();
        let i = rng.uniform_matrix(k, h, -1.0, 1.0);
        let t = rng.uniform_matrix(n, h, -1.0, 1.0);
        let fast = composite_attention_forward(&i, &t, &w).unwrap();
        let (d, _) = approx_equal(&fast, &naive_composite_attention(&i, &t, &w), 0.0).unwrap();
        prop_assert!(d < 1e-12, "diff {}", d);
    }

    #[test]
    fn aligner_matches_naive_oracle(k in 1usize..10, seed in any::<u64>()) {
        let mut rng = Prng::new(seed);
        let layer = LayerWeights::random(&mut rng, 8, 2, 0.4).unwrap();
        let i = rng.uniform_matrix(k, 8, -1.0, 1.0);
        let (d, _) = approx_equal(&aligner_forward(&i, &layer).unwrap(), &naive_aligner(&i, &layer), 0.0).unwrap();
        prop_assert!(d < 1e-12, "diff {}", d);
    }

    #[test]
    fn closed_forms_match_big_integers(t in 1u64..100_000, v in 0u64..100_000, h in 1u64..20_000, d in 1u64..200) {
        let c = CostConfig::new(t, v, h, d).unwrap();
        let (tb, vb, hb, db) = (BigUint::from(t), BigUint::from(v), BigUint::from(h), BigUint::from(d));
        let l = &tb + &vb;
        let base = BigUint::from(24u32) * &l * &db * &hb * &hb + BigUint::from(4u32) * &l * &l * &db * &hb;
        let ee = BigUint::from(2u32) * (BigUint::from(11u32) * &tb + BigUint::from(10u32) * &vb) * &db * &hb * &hb
            + BigUint::from(4u32) * &vb * &tb * &db * &hb
            + BigUint::from(4u32) * &tb * &tb * &db * &hb;
        prop_assert_eq!(BigUint::from(flops_baseline_total(&c)), base);
        prop_assert_eq!(BigUint::from(flops_ee_total(&c)), ee);
        prop_assert!(flops_ratio(&c) < 1.0);
        prop_assert_eq!(flops_ratio(&c).to_bits(), flops_ratio(&CostConfig { layers: 1, ..c }).to_bits());
    }

    #[test]
    fn weight_and_feature_files_round_trip(layers in 1usize..3, heads in 1usize..3, k in 0usize..6, seed in any::<u64>()) {
        let cfg = ModelConfig { layers, hidden: 4 * heads, heads, vocab: 7, feat_dim: 3, mode: Mode::Composite };
        let model = Model::new(cfg, seed).unwrap();
        let mut buf = Vec::new();
        write_weights(&mut buf, &model).unwrap();
        prop_assert_eq!(read_weights(&mut buf.as_slice()).unwrap(), model);
        let f = random(seed, k, 3);
        let mut fb = Vec::new();
        write_features(&mut fb, &f).unwrap();
        prop_assert_eq!(read_features(&mut fb.as_slice()).unwrap(), f);
    }
}
