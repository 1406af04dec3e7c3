//! Half to single precision widening.
//!
//! The PE array converts FP16 operands with a per-PE lookup table. The table
//! here is built once from the bit-level widening rule and indexed by the raw
//! 16-bit pattern.

use std::sync::OnceLock;

static LUT: OnceLock<Box<[f32]>> = OnceLock::new();

/// Widens a half-precision bit pattern to single precision by bit
/// manipulation. NaNs keep their payload and come out quiet.
pub const fn widen_bits(h: u16) -> u32 {
    let sign = ((h as u32) & 0x8000) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let mant = (h & 0x03ff) as u32;

    match exp {
        0 => {
            if mant == 0 {
                return sign;
            }
            // subnormal half: every one is a normal single
            let mut m = mant;
            let mut e: i32 = -14;
            while m & 0x0400 == 0 {
                m <<= 1;
                e -= 1;
            }
            m &= 0x03ff;
            sign | (((e + 127) as u32) << 23) | (m << 13)
        }
        0x1f => {
            if mant == 0 {
                sign | 0x7f80_0000
            } else {
                sign | 0x7fc0_0000 | (mant << 13)
            }
        }
        _ => sign | ((exp + 127 - 15) << 23) | (mant << 13),
    }
}

fn table() -> &'static [f32] {
    LUT.get_or_init(|| {
        (0..=u16::MAX)
            .map(|h| f32::from_bits(widen_bits(h)))
            .collect::<Vec<_>>()
            .into_boxed_slice()
    })
}

/// FP16 -> FP32 through the 65536-entry table.
#[inline]
pub fn f16_to_f32(h: u16) -> f32 {
    table()[h as usize]
}

/// Smallest half-precision value that is `>= x`, for finite `x >= 0`.
///
/// Quantizers store scales rounded up so that no quant saturates.
pub(crate) fn f16_ceil(x: f64) -> Option<half::f16> {
    debug_assert!(x >= 0.0);
    let h = half::f16::from_f64(x);
    if !h.is_finite() {
        return None;
    }
    if f64::from(h) >= x {
        return Some(h);
    }
    let up = half::f16::from_bits(h.to_bits() + 1);
    up.is_finite().then_some(up)
}
