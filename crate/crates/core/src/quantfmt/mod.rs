//! Block quantization formats and the reference dot-product oracles.

mod blocks;
mod dot;
mod fixture;
mod quantize;
mod widen;

use std::fmt;
use std::str::FromStr;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::blocks::{
    pack_scales6, unpack_scales6, BlockQ3K, BlockQ6K, BlockQ8K, BlockQ8_0, FP16_BURST,
    K_SCALE_SIZE, QK8_0, QK_K,
};
pub(crate) use self::dot::check_pair;
pub use self::dot::{q3k_subdots, q6k_subdots, ref_dot, RefDot};
pub use self::fixture::{read_fixture, write_fixture};
pub use self::quantize::{dequantize, element_steps, quantize};
pub use self::widen::{f16_to_f32, widen_bits};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QuantFormat {
    #[serde(rename = "FP16")]
    F16,
    #[serde(rename = "Q3_K")]
    Q3K,
    #[serde(rename = "Q6_K")]
    Q6K,
    #[serde(rename = "Q8_0")]
    Q8_0,
    #[serde(rename = "Q8_K")]
    Q8K,
}

impl QuantFormat {
    /// The four formats with a PE-array kernel, in table order.
    pub const KERNELS: [QuantFormat; 4] = [Self::F16, Self::Q3K, Self::Q6K, Self::Q8_0];

    pub const fn name(self) -> &'static str {
        match self {
            Self::F16 => "FP16",
            Self::Q3K => "Q3_K",
            Self::Q6K => "Q6_K",
            Self::Q8_0 => "Q8_0",
            Self::Q8K => "Q8_K",
        }
    }

    pub const fn block_elems(self) -> usize {
        match self {
            Self::F16 => FP16_BURST,
            Self::Q8_0 => QK8_0,
            Self::Q3K | Self::Q6K | Self::Q8K => QK_K,
        }
    }

    pub const fn block_bytes(self) -> usize {
        match self {
            Self::F16 => 2 * FP16_BURST,
            Self::Q8_0 => BlockQ8_0::BYTES,
            Self::Q3K => BlockQ3K::BYTES,
            Self::Q6K => BlockQ6K::BYTES,
            Self::Q8K => BlockQ8K::BYTES,
        }
    }

    /// Storage bytes per element, amortized over a block.
    pub fn bytes_per_elem(self) -> f64 {
        self.block_bytes() as f64 / self.block_elems() as f64
    }

    /// Format the activations must be in when this is the weight format.
    pub const fn activation_format(self) -> QuantFormat {
        match self {
            Self::Q3K | Self::Q6K => Self::Q8K,
            other => other,
        }
    }
}

impl fmt::Display for QuantFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FP16" | "F16" => Ok(Self::F16),
            "Q3_K" | "Q3K" => Ok(Self::Q3K),
            "Q6_K" | "Q6K" => Ok(Self::Q6K),
            "Q8_0" | "Q80" => Ok(Self::Q8_0),
            "Q8_K" | "Q8K" => Ok(Self::Q8K),
            _ => Err(Error::Format(format!("unknown format `{s}`"))),
        }
    }
}

/// A run of blocks in one format.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantTensor {
    F16(Vec<f16>),
    Q8_0(Vec<BlockQ8_0>),
    Q3K(Vec<BlockQ3K>),
    Q6K(Vec<BlockQ6K>),
    Q8K(Vec<BlockQ8K>),
}

impl QuantTensor {
    /// Wraps raw halves; the length must be a whole number of bursts.
    pub fn from_f16(values: Vec<f16>) -> Result<Self> {
        if !values.len().is_multiple_of(FP16_BURST) {
            return Err(Error::Shape(format!(
                "FP16 length {} is not a multiple of {FP16_BURST}",
                values.len()
            )));
        }
        Ok(Self::F16(values))
    }

    pub fn format(&self) -> QuantFormat {
        match self {
            Self::F16(_) => QuantFormat::F16,
            Self::Q8_0(_) => QuantFormat::Q8_0,
            Self::Q3K(_) => QuantFormat::Q3K,
            Self::Q6K(_) => QuantFormat::Q6K,
            Self::Q8K(_) => QuantFormat::Q8K,
        }
    }

    pub fn n_blocks(&self) -> usize {
        match self {
            Self::F16(v) => v.len() / FP16_BURST,
            Self::Q8_0(v) => v.len(),
            Self::Q3K(v) => v.len(),
            Self::Q6K(v) => v.len(),
            Self::Q8K(v) => v.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_blocks() * self.format().block_elems()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.n_blocks() * self.format().block_bytes());
        match self {
            Self::F16(v) => v
                .iter()
                .for_each(|h| out.extend_from_slice(&h.to_le_bytes())),
            Self::Q8_0(v) => v.iter().for_each(|b| b.write(&mut out)),
            Self::Q3K(v) => v.iter().for_each(|b| b.write(&mut out)),
            Self::Q6K(v) => v.iter().for_each(|b| b.write(&mut out)),
            Self::Q8K(v) => v.iter().for_each(|b| b.write(&mut out)),
        }
        out
    }

    pub fn from_bytes(format: QuantFormat, bytes: &[u8]) -> Result<Self> {
        let bb = format.block_bytes();
        if !bytes.len().is_multiple_of(bb) {
            return Err(Error::Shape(format!(
                "{} payload of {} bytes is not a multiple of {bb}",
                format,
                bytes.len()
            )));
        }
        let chunks = bytes.chunks_exact(bb);
        Ok(match format {
            QuantFormat::F16 => Self::F16(
                bytes
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            QuantFormat::Q8_0 => Self::Q8_0(chunks.map(BlockQ8_0::read).collect()),
            QuantFormat::Q3K => Self::Q3K(chunks.map(BlockQ3K::read).collect()),
            QuantFormat::Q6K => Self::Q6K(chunks.map(BlockQ6K::read).collect()),
            QuantFormat::Q8K => {
                let blocks: Vec<BlockQ8K> = chunks.map(BlockQ8K::read).collect();
                if let Some(i) = blocks.iter().position(|b| !b.bsums_consistent()) {
                    return Err(Error::Format(format!("Q8_K block {i} has stale bsums")));
                }
                Self::Q8K(blocks)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_names_roundtrip() {
        for f in [
            QuantFormat::F16,
            QuantFormat::Q3K,
            QuantFormat::Q6K,
            QuantFormat::Q8_0,
            QuantFormat::Q8K,
        ] {
            assert_eq!(f.name().parse::<QuantFormat>().unwrap(), f);
            let js = serde_json::to_string(&f).unwrap();
            assert_eq!(js, format!("\"{}\"", f.name()));
        }
        assert!("Q4_0".parse::<QuantFormat>().is_err());
    }

    #[test]
    fn fp16_length_checked() {
        assert!(QuantTensor::from_f16(vec![f16::ONE; 15]).is_err());
        assert_eq!(QuantTensor::from_f16(vec![f16::ONE; 32]).unwrap().len(), 32);
    }
}
