#![allow(dead_code)]

use cgla_core::quantfmt::{
    pack_scales6, BlockQ3K, BlockQ6K, BlockQ8K, BlockQ8_0, QuantTensor, QK_K,
};
use half::f16;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Positive normal half with a moderate exponent.
pub fn rand_half(r: &mut impl Rng) -> f16 {
    let exp: u16 = r.gen_range(5..20);
    let mant: u16 = r.gen_range(0..1024);
    f16::from_bits(exp << 10 | mant)
}

pub fn rand_q8_0(r: &mut impl Rng) -> BlockQ8_0 {
    BlockQ8_0 {
        d: rand_half(r),
        qs: std::array::from_fn(|_| r.gen_range(-127..=127)),
    }
}

pub fn rand_q8k(r: &mut impl Rng) -> BlockQ8K {
    let d = r.gen_range(1.0e-4f32..1.0e-1);
    BlockQ8K::new(d, std::array::from_fn(|_| r.gen_range(-127..=127)))
}

pub fn rand_q6k(r: &mut impl Rng) -> BlockQ6K {
    let mut b = BlockQ6K::zeroed();
    r.fill(&mut b.ql[..]);
    r.fill(&mut b.qh[..]);
    b.scales = std::array::from_fn(|_| r.gen());
    b.d = rand_half(r);
    b
}

pub fn rand_q3k_codes(r: &mut impl Rng, codes: [u8; 16]) -> BlockQ3K {
    let mut b = BlockQ3K::zeroed();
    r.fill(&mut b.hmask[..]);
    r.fill(&mut b.qs[..]);
    b.scales = pack_scales6(&codes);
    b.d = rand_half(r);
    b
}

pub fn rand_q3k(r: &mut impl Rng) -> BlockQ3K {
    let codes = std::array::from_fn(|_| r.gen_range(0..64));
    rand_q3k_codes(r, codes)
}

pub fn rand_f16_vec(r: &mut impl Rng, n: usize) -> Vec<f16> {
    (0..n)
        .map(|_| f16::from_f32(r.gen_range(-4.0f32..4.0)))
        .collect()
}

// ---- independent scalar decoders, straight from the byte layouts ----

pub fn half_f64(lo: u8, hi: u8) -> f64 {
    f16::from_le_bytes([lo, hi]).to_f64()
}

/// Q6_K element quants from raw bytes, following the ggml reference loop.
pub fn q6k_quants_from_bytes(b: &[u8]) -> [i32; QK_K] {
    let (ql, qh) = (&b[..128], &b[128..192]);
    let mut y = [0i32; QK_K];
    for n in 0..2 {
        let (ql, qh) = (&ql[n * 64..], &qh[n * 32..]);
        for l in 0..32 {
            let o = n * 128;
            y[o + l] = ((ql[l] & 0xf) | ((qh[l] & 3) << 4)) as i32 - 32;
            y[o + l + 32] = ((ql[l + 32] & 0xf) | (((qh[l] >> 2) & 3) << 4)) as i32 - 32;
            y[o + l + 64] = ((ql[l] >> 4) | (((qh[l] >> 4) & 3) << 4)) as i32 - 32;
            y[o + l + 96] = ((ql[l + 32] >> 4) | (((qh[l] >> 6) & 3) << 4)) as i32 - 32;
        }
    }
    y
}

/// Q3_K quants and signed scales from raw bytes, following the ggml loop.
pub fn q3k_from_bytes(b: &[u8]) -> ([i32; QK_K], [i32; 16]) {
    let (hm, qs, sc) = (&b[..32], &b[32..96], &b[96..108]);
    let mut y = [0i32; QK_K];
    let mut m = 1u8;
    let mut idx = 0;
    for n in 0..2 {
        let q = &qs[n * 32..];
        for shift in [0, 2, 4, 6] {
            for l in 0..32 {
                let low = ((q[l] >> shift) & 3) as i32;
                y[idx] = low - if hm[l] & m != 0 { 0 } else { 4 };
                idx += 1;
            }
            m <<= 1;
        }
    }
    // ggml's aux-word unpacking of the 12 scale bytes
    let aux = [
        u32::from_le_bytes(sc[0..4].try_into().unwrap()),
        u32::from_le_bytes(sc[4..8].try_into().unwrap()),
        u32::from_le_bytes(sc[8..12].try_into().unwrap()),
    ];
    let (km1, km2) = (0x0303_0303u32, 0x0f0f_0f0fu32);
    let tmp = aux[2];
    let words = [
        (aux[0] & km2) | ((tmp & km1) << 4),
        (aux[1] & km2) | (((tmp >> 2) & km1) << 4),
        ((aux[0] >> 4) & km2) | (((tmp >> 4) & km1) << 4),
        ((aux[1] >> 4) & km2) | (((tmp >> 6) & km1) << 4),
    ];
    let mut s = [0i32; 16];
    for (i, w) in words.iter().enumerate() {
        for (k, byte) in w.to_le_bytes().iter().enumerate() {
            s[4 * i + k] = *byte as i8 as i32 - 32;
        }
    }
    (y, s)
}

pub fn bytes_of(t: &QuantTensor) -> Vec<u8> {
    t.to_bytes()
}
