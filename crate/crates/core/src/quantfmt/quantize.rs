use half::f16;

use super::blocks::*;
use super::widen::{f16_ceil, f16_to_f32};
use super::{QuantFormat, QuantTensor};
use crate::error::{Error, Result};

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::InvalidValue {
            index,
            value: values[index] as f64,
        }),
        None => Ok(()),
    }
}

fn amax(xs: &[f32]) -> f64 {
    xs.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs()))
}

fn scale_f16(x: f64) -> Result<f16> {
    f16_ceil(x).ok_or_else(|| Error::Range(format!("block scale {x:e} exceeds half range")))
}

#[inline]
fn rne_clamp(x: f64, lo: i32, hi: i32) -> i32 {
    (x.round_ties_even() as i32).clamp(lo, hi)
}

/// Quantizes `values` with amax scaling.
///
/// Stored scales round up, quants round to nearest even, so every element
/// lands within half a step of its input.
pub fn quantize(format: QuantFormat, values: &[f32]) -> Result<QuantTensor> {
    check_finite(values)?;
    let bs = format.block_elems();
    if !values.len().is_multiple_of(bs) {
        return Err(Error::Shape(format!(
            "{format} needs a multiple of {bs} values, got {}",
            values.len()
        )));
    }
    Ok(match format {
        QuantFormat::F16 => {
            let mut out = Vec::with_capacity(values.len());
            for (index, &v) in values.iter().enumerate() {
                let h = f16::from_f32(v);
                if !h.is_finite() {
                    return Err(Error::InvalidValue {
                        index,
                        value: v as f64,
                    });
                }
                out.push(h);
            }
            QuantTensor::F16(out)
        }
        QuantFormat::Q8_0 => QuantTensor::Q8_0(
            values
                .chunks_exact(bs)
                .map(quantize_q8_0)
                .collect::<Result<_>>()?,
        ),
        QuantFormat::Q6K => QuantTensor::Q6K(
            values
                .chunks_exact(bs)
                .map(quantize_q6k)
                .collect::<Result<_>>()?,
        ),
        QuantFormat::Q3K => QuantTensor::Q3K(
            values
                .chunks_exact(bs)
                .map(quantize_q3k)
                .collect::<Result<_>>()?,
        ),
        QuantFormat::Q8K => QuantTensor::Q8K(values.chunks_exact(bs).map(quantize_q8k).collect()),
    })
}

fn quantize_q8_0(x: &[f32]) -> Result<BlockQ8_0> {
    let d = scale_f16(amax(x) / 127.0)?;
    let df = f64::from(d);
    let mut qs = [0i8; QK8_0];
    if df > 0.0 {
        for (q, &v) in qs.iter_mut().zip(x) {
            *q = rne_clamp(v as f64 / df, -127, 127) as i8;
        }
    }
    Ok(BlockQ8_0 { d, qs })
}

fn quantize_q6k(x: &[f32]) -> Result<BlockQ6K> {
    let steps: Vec<f64> = x.chunks_exact(16).map(|s| amax(s) / 31.0).collect();
    let top = steps.iter().cloned().fold(0.0, f64::max);
    let mut blk = BlockQ6K::zeroed();
    blk.d = scale_f16(top / 127.0)?;
    let d = f64::from(blk.d);
    for (j, &st) in steps.iter().enumerate() {
        let sc = if d > 0.0 {
            (st / d).ceil().min(127.0) as i8
        } else {
            0
        };
        blk.scales[j] = sc;
        let e = d * sc as f64;
        for i in 0..16 {
            let q = if e > 0.0 {
                rne_clamp(x[j * 16 + i] as f64 / e, -32, 31)
            } else {
                0
            };
            blk.set_code(j * 16 + i, (q + 32) as u8);
        }
    }
    Ok(blk)
}

fn quantize_q3k(x: &[f32]) -> Result<BlockQ3K> {
    let steps: Vec<f64> = x.chunks_exact(16).map(|s| amax(s) / 3.0).collect();
    let top = steps.iter().cloned().fold(0.0, f64::max);
    let mut blk = BlockQ3K::zeroed();
    blk.d = scale_f16(top / 31.0)?;
    let d = f64::from(blk.d);
    let mut codes = [32u8; 16];
    for (j, &st) in steps.iter().enumerate() {
        let s = if d > 0.0 {
            (st / d).ceil().min(31.0) as i32
        } else {
            0
        };
        codes[j] = (s + 32) as u8;
        let e = d * s as f64;
        for i in 0..16 {
            let q = if e > 0.0 {
                rne_clamp(x[j * 16 + i] as f64 / e, -4, 3)
            } else {
                0
            };
            blk.set_quant(j * 16 + i, q as i8);
        }
    }
    blk.scales = pack_scales6(&codes);
    Ok(blk)
}

fn quantize_q8k(x: &[f32]) -> BlockQ8K {
    let d = (amax(x) / 127.0) as f32;
    let mut qs = [0i8; QK_K];
    if d > 0.0 {
        for (q, &v) in qs.iter_mut().zip(x) {
            *q = rne_clamp(v as f64 / d as f64, -127, 127) as i8;
        }
    }
    BlockQ8K::new(d, qs)
}

/// Reconstructs real values in double precision.
pub fn dequantize(t: &QuantTensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    match t {
        QuantTensor::F16(v) => out.extend(v.iter().map(|h| f16_to_f32(h.to_bits()) as f64)),
        QuantTensor::Q8_0(v) => {
            for b in v {
                let d = f16_to_f32(b.d.to_bits()) as f64;
                out.extend(b.qs.iter().map(|&q| d * q as f64));
            }
        }
        QuantTensor::Q6K(v) => {
            for b in v {
                let d = f16_to_f32(b.d.to_bits()) as f64;
                out.extend((0..QK_K).map(|e| d * b.scales[e / 16] as f64 * b.quant(e) as f64));
            }
        }
        QuantTensor::Q3K(v) => {
            for b in v {
                let d = f16_to_f32(b.d.to_bits()) as f64;
                let codes = b.scale_codes();
                out.extend((0..QK_K).map(|e| {
                    let s = codes[e / 16] as i32 - 32;
                    d * s as f64 * b.quant(e) as f64
                }));
            }
        }
        QuantTensor::Q8K(v) => {
            for b in v {
                out.extend(b.qs.iter().map(|&q| b.d as f64 * q as f64));
            }
        }
    }
    out
}

/// Effective quantization step of every element: the spacing of the grid
/// the element was rounded onto.
pub fn element_steps(t: &QuantTensor) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.len());
    match t {
        QuantTensor::F16(v) => out.extend(v.iter().map(|h| {
            let a = f64::from(*h).abs();
            let up = f16::from_bits((f16::from_f64(a).to_bits() & 0x7fff) + 1);
            f64::from(up) - a
        })),
        QuantTensor::Q8_0(v) => {
            for b in v {
                out.extend(std::iter::repeat_n(f64::from(b.d), QK8_0));
            }
        }
        QuantTensor::Q6K(v) => {
            for b in v {
                let d = f64::from(b.d);
                out.extend((0..QK_K).map(|e| d * (b.scales[e / 16] as f64).abs()));
            }
        }
        QuantTensor::Q3K(v) => {
            for b in v {
                let d = f64::from(b.d);
                let codes = b.scale_codes();
                out.extend((0..QK_K).map(|e| d * (codes[e / 16] as f64 - 32.0).abs()));
            }
        }
        QuantTensor::Q8K(v) => {
            for b in v {
                out.extend(std::iter::repeat_n(b.d as f64, QK_K));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q8_0_constant_block() {
        let t = quantize(QuantFormat::Q8_0, &[2.0; 32]).unwrap();
        let QuantTensor::Q8_0(b) = t else {
            unreachable!()
        };
        assert!(b[0].qs.iter().all(|&q| q == 127));
        // 2/127 rounded up to the next half
        assert!(f64::from(b[0].d) >= 2.0 / 127.0);
        assert!(f64::from(b[0].d) - 2.0 / 127.0 < 2.0 / 127.0 * 2f64.powi(-10));
    }

    #[test]
    fn zeros_give_zero_scale() {
        for f in [
            QuantFormat::Q8_0,
            QuantFormat::Q6K,
            QuantFormat::Q3K,
            QuantFormat::Q8K,
        ] {
            let t = quantize(f, &[0.0; 256]).unwrap();
            assert!(dequantize(&t).iter().all(|&x| x == 0.0));
        }
        let QuantTensor::Q8_0(b) = quantize(QuantFormat::Q8_0, &[0.0; 32]).unwrap() else {
            unreachable!()
        };
        assert_eq!(b[0].d.to_bits(), 0);
        assert!(b[0].qs.iter().all(|&q| q == 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            quantize(QuantFormat::Q8_0, &[0.0; 31]),
            Err(Error::Shape(_))
        ));
        let mut v = [0.0f32; 32];
        v[7] = f32::NAN;
        assert!(matches!(
            quantize(QuantFormat::Q8_0, &v),
            Err(Error::InvalidValue { index: 7, .. })
        ));
        assert!(quantize(QuantFormat::F16, &[1.0e6; 16]).is_err());
    }

    #[test]
    fn dequant_simple_q8_0() {
        let b = BlockQ8_0 {
            d: f16::from_f32(0.5),
            qs: [1; 32],
        };
        assert_eq!(dequantize(&QuantTensor::Q8_0(vec![b])), vec![0.5; 32]);
    }

    #[test]
    fn dequant_q3k_zero_scale() {
        let mut b = BlockQ3K::zeroed();
        b.d = f16::ONE;
        b.scales = pack_scales6(&[32; 16]);
        for e in 0..QK_K {
            b.set_quant(e, -4);
        }
        assert!(dequantize(&QuantTensor::Q3K(vec![b]))
            .iter()
            .all(|&x| x == 0.0));
    }
}
