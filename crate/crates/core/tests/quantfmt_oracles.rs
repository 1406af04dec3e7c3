mod common;

use cgla_core::quantfmt::{
    dequantize, element_steps, f16_to_f32, q3k_subdots, quantize, ref_dot, widen_bits, BlockQ8K,
    QuantFormat, QuantTensor, QK_K,
};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn f16_widening_matches_half_crate_exhaustively() {
    for h in 0..=u16::MAX {
        let want = half::f16::from_bits(h).to_f32().to_bits();
        assert_eq!(f16_to_f32(h).to_bits(), want, "pattern {h:#06x}");
        assert_eq!(widen_bits(h), want);
    }
}

#[test]
fn q6k_dequant_matches_scalar_decoder() {
    let mut r = rng(11);
    for _ in 0..200 {
        let b = rand_q6k(&mut r);
        let t = QuantTensor::Q6K(vec![b]);
        let raw = t.to_bytes();
        let q = q6k_quants_from_bytes(&raw);
        let d = half_f64(raw[208], raw[209]);
        let got = dequantize(&t);
        for e in 0..QK_K {
            let sc = raw[192 + e / 16] as i8 as f64;
            assert_eq!(got[e], d * sc * q[e] as f64);
        }
    }
}

#[test]
fn q3k_dequant_matches_scalar_decoder() {
    let mut r = rng(12);
    for _ in 0..200 {
        let b = rand_q3k(&mut r);
        let t = QuantTensor::Q3K(vec![b]);
        let raw = t.to_bytes();
        let (q, s) = q3k_from_bytes(&raw);
        let d = half_f64(raw[108], raw[109]);
        let got = dequantize(&t);
        for e in 0..QK_K {
            assert_eq!(got[e], d * s[e / 16] as f64 * q[e] as f64);
        }
    }
}

#[test]
fn roundtrip_error_bound_random_blocks() {
    let mut r = rng(13);
    for f in [
        QuantFormat::Q8_0,
        QuantFormat::Q6K,
        QuantFormat::Q3K,
        QuantFormat::Q8K,
        QuantFormat::F16,
    ] {
        for _ in 0..1000 {
            let x: Vec<f32> = (0..256).map(|_| r.gen_range(-1.0f32..1.0)).collect();
            let t = quantize(f, &x).unwrap();
            let y = dequantize(&t);
            let steps = element_steps(&t);
            for i in 0..256 {
                let err = (y[i] - x[i] as f64).abs();
                assert!(
                    err <= steps[i] / 2.0,
                    "{f} elem {i}: err {err} step {}",
                    steps[i]
                );
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roundtrip_bound_any_finite(
        xs in prop::collection::vec(-6.0e4f32..6.0e4, 256),
        scale_pow in -20i32..0,
    ) {
        let s = 2f32.powi(scale_pow);
        let x: Vec<f32> = xs.iter().map(|v| v * s).collect();
        for f in [QuantFormat::Q8_0, QuantFormat::Q6K, QuantFormat::Q3K, QuantFormat::Q8K, QuantFormat::F16] {
            let t = quantize(f, &x).unwrap();
            let y = dequantize(&t);
            let steps = element_steps(&t);
            for i in 0..256 {
                prop_assert!((y[i] - x[i] as f64).abs() <= steps[i] / 2.0);
            }
        }
    }

    #[test]
    fn q8k_bsums_always_consistent(xs in prop::collection::vec(-10.0f32..10.0, 256)) {
        let QuantTensor::Q8K(b) = quantize(QuantFormat::Q8K, &xs).unwrap() else { unreachable!() };
        for j in 0..16 {
            let s: i32 = b[0].qs[16 * j..16 * j + 16].iter().map(|&q| q as i32).sum();
            prop_assert_eq!(b[0].bsums[j] as i32, s);
        }
    }

    #[test]
    fn dequantize_is_pure(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = QuantTensor::Q6K(vec![rand_q6k(&mut r)]);
        prop_assert_eq!(dequantize(&t), dequantize(&t.clone()));
    }
}

/// Dequantize both sides, dot in double precision.
fn dequant_dot(w: &QuantTensor, a: &QuantTensor) -> f64 {
    dequantize(w)
        .iter()
        .zip(dequantize(a))
        .map(|(x, y)| x * y)
        .sum()
}

#[test]
fn q3k_ref_dot_close_to_double_oracle() {
    let mut r = rng(14);
    for _ in 0..1000 {
        let w = QuantTensor::Q3K(vec![rand_q3k(&mut r)]);
        let a = QuantTensor::Q8K(vec![rand_q8k(&mut r)]);
        let got = ref_dot(QuantFormat::Q3K, &w, &a).unwrap().value;
        let want = dequant_dot(&w, &a);
        let scale = dequantize(&w)
            .iter()
            .zip(dequantize(&a))
            .map(|(x, y)| (x * y).abs())
            .sum::<f64>();
        assert!(
            (got - want).abs() <= scale * 2f64.powi(-16),
            "{got} vs {want}"
        );
    }
}

#[test]
fn ref_dot_zero_activations() {
    let mut r = rng(15);
    let zq8k = QuantTensor::Q8K(vec![BlockQ8K::new(0.5, [0; QK_K])]);
    for w in [
        QuantTensor::Q3K(vec![rand_q3k(&mut r)]),
        QuantTensor::Q6K(vec![rand_q6k(&mut r)]),
    ] {
        assert_eq!(ref_dot(w.format(), &w, &zq8k).unwrap().value, 0.0);
    }
    let w = QuantTensor::Q8_0((0..8).map(|_| rand_q8_0(&mut r)).collect());
    let mut za = rand_q8_0(&mut r);
    za.qs = [0; 32];
    let a = QuantTensor::Q8_0(vec![za; 8]);
    assert_eq!(ref_dot(QuantFormat::Q8_0, &w, &a).unwrap().value, 0.0);
    let w = QuantTensor::F16(rand_f16_vec(&mut r, 64));
    let a = QuantTensor::F16(vec![half::f16::ZERO; 64]);
    assert_eq!(ref_dot(QuantFormat::F16, &w, &a).unwrap().value, 0.0);
}

#[test]
fn partials_linear_in_activation_quants() {
    let mut r = rng(16);
    for _ in 0..200 {
        let wq3 = rand_q3k(&mut r);
        let wq6 = rand_q6k(&mut r);
        let qa: [i8; QK_K] = std::array::from_fn(|_| r.gen_range(-60..=60));
        let qb: [i8; QK_K] = std::array::from_fn(|_| r.gen_range(-60..=60));
        let sum: [i8; QK_K] = std::array::from_fn(|i| qa[i] + qb[i]);
        let mk = |q| QuantTensor::Q8K(vec![BlockQ8K::new(0.01, q)]);
        for w in [QuantTensor::Q3K(vec![wq3]), QuantTensor::Q6K(vec![wq6])] {
            let f = w.format();
            let pa = ref_dot(f, &w, &mk(qa)).unwrap().partials[0];
            let pb = ref_dot(f, &w, &mk(qb)).unwrap().partials[0];
            let ps = ref_dot(f, &w, &mk(sum)).unwrap().partials[0];
            assert_eq!(ps, pa + pb);
        }
        // subdots agree with the byte-level decoder
        let raw = QuantTensor::Q3K(vec![wq3]).to_bytes();
        let (q, _) = q3k_from_bytes(&raw);
        let sd = q3k_subdots(&wq3, &BlockQ8K::new(1.0, qa));
        for j in 0..16 {
            let want: i32 = (0..16).map(|i| q[16 * j + i] * qa[16 * j + i] as i32).sum();
            assert_eq!(sd[j], want);
        }
    }
}
