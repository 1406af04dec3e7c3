use super::blocks::*;
use super::widen::f16_to_f32;
use super::{QuantFormat, QuantTensor};
use crate::error::{Error, Result};

/// Reference dot product plus the exact integer partial of each block.
///
/// FP16 has no integer partials, so `partials` is empty there.
#[derive(Debug, Clone, PartialEq)]
pub struct RefDot {
    pub value: f64,
    pub partials: Vec<i64>,
}

pub(crate) fn check_pair(
    format: QuantFormat,
    weights: &QuantTensor,
    acts: &QuantTensor,
) -> Result<()> {
    if format == QuantFormat::Q8K {
        return Err(Error::UnsupportedFormat(format));
    }
    if weights.format() != format {
        return Err(Error::Format(format!(
            "weights are {} but {format} was requested",
            weights.format()
        )));
    }
    let want = format.activation_format();
    if acts.format() != want {
        return Err(Error::Format(format!(
            "{format} weights need {want} activations, got {}",
            acts.format()
        )));
    }
    if weights.len() != acts.len() {
        return Err(Error::Shape(format!(
            "weights have {} elements, activations {}",
            weights.len(),
            acts.len()
        )));
    }
    Ok(())
}

/// Integer sub-dots of one Q3_K super-block, per 16-element sub-block.
pub fn q3k_subdots(w: &BlockQ3K, a: &BlockQ8K) -> [i32; 16] {
    let mut out = [0i32; 16];
    for (e, &qa) in a.qs.iter().enumerate() {
        out[e / 16] += w.quant(e) as i32 * qa as i32;
    }
    out
}

pub fn q6k_subdots(w: &BlockQ6K, a: &BlockQ8K) -> [i32; 16] {
    let mut out = [0i32; 16];
    for (e, &qa) in a.qs.iter().enumerate() {
        out[e / 16] += w.quant(e) as i32 * qa as i32;
    }
    out
}

fn h(x: half::f16) -> f32 {
    f16_to_f32(x.to_bits())
}

/// FP16 reference: lane 0 chains the even elements of a burst, lane 1 the
/// odd ones, the two lanes meet at the end of the burst, and bursts add up
/// in ascending order. All in single precision.
fn fp16_dot(w: &[half::f16], a: &[half::f16]) -> f32 {
    let mut acc = 0.0f32;
    for (wb, ab) in w.chunks_exact(FP16_BURST).zip(a.chunks_exact(FP16_BURST)) {
        let mut l0 = 0.0f32;
        let mut l1 = 0.0f32;
        for i in 0..FP16_BURST / 2 {
            l0 = h(wb[2 * i]).mul_add(h(ab[2 * i]), l0);
            l1 = h(wb[2 * i + 1]).mul_add(h(ab[2 * i + 1]), l1);
        }
        acc += l0 + l1;
    }
    acc
}

pub fn ref_dot(format: QuantFormat, weights: &QuantTensor, acts: &QuantTensor) -> Result<RefDot> {
    check_pair(format, weights, acts)?;
    Ok(match (weights, acts) {
        (QuantTensor::F16(w), QuantTensor::F16(a)) => RefDot {
            value: fp16_dot(w, a) as f64,
            partials: Vec::new(),
        },
        (QuantTensor::Q8_0(w), QuantTensor::Q8_0(a)) => {
            let mut acc = 0.0f32;
            let mut partials = Vec::with_capacity(w.len());
            for (bw, ba) in w.iter().zip(a) {
                let p: i32 = bw
                    .qs
                    .iter()
                    .zip(&ba.qs)
                    .map(|(&x, &y)| x as i32 * y as i32)
                    .sum();
                let scale = h(bw.d) * h(ba.d);
                acc = scale.mul_add(p as f32, acc);
                partials.push(p as i64);
            }
            RefDot {
                value: acc as f64,
                partials,
            }
        }
        (QuantTensor::Q6K(w), QuantTensor::Q8K(a)) => k_combine(w.iter().zip(a).map(|(bw, ba)| {
            let sd = q6k_subdots(bw, ba);
            let s: i64 = (0..16).map(|j| bw.scales[j] as i64 * sd[j] as i64).sum();
            (h(bw.d) as f64 * ba.d as f64, s)
        })),
        (QuantTensor::Q3K(w), QuantTensor::Q8K(a)) => k_combine(w.iter().zip(a).map(|(bw, ba)| {
            let sd = q3k_subdots(bw, ba);
            let codes = bw.scale_codes();
            let s: i64 = (0..16).map(|j| (codes[j] as i64 - 32) * sd[j] as i64).sum();
            (h(bw.d) as f64 * ba.d as f64, s)
        })),
        _ => unreachable!("checked by check_pair"),
    })
}

/// K-format combination: `k = d_w * d_a` is exact in double precision and
/// gets fused with the block's integer partial, ascending block order.
pub(crate) fn k_combine(blocks: impl Iterator<Item = (f64, i64)>) -> RefDot {
    let mut acc = 0.0f64;
    let mut partials = Vec::new();
    for (k, s) in blocks {
        acc = k.mul_add(s as f64, acc);
        partials.push(s);
    }
    RefDot {
        value: acc,
        partials,
    }
}
