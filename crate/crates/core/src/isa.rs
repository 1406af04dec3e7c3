//! Custom PE instructions, bit-exact.
//!
//! A [`PEWord`] is 64 bits wide: lane 0 is the low 32 bits, lane 1 the high
//! 32. Inside a lane byte 0 is least significant. No instruction lets one
//! lane see the other.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PEWord(pub u64);

impl PEWord {
    #[inline]
    pub const fn from_lanes(l0: u32, l1: u32) -> Self {
        Self(l0 as u64 | (l1 as u64) << 32)
    }

    #[inline]
    pub const fn lane(self, i: usize) -> u32 {
        (self.0 >> (32 * i)) as u32
    }

    pub fn from_i8x4(l0: [i8; 4], l1: [i8; 4]) -> Self {
        let pack = |v: [i8; 4]| u32::from_le_bytes(v.map(|x| x as u8));
        Self::from_lanes(pack(l0), pack(l1))
    }

    pub fn from_i16x2(l0: [i16; 2], l1: [i16; 2]) -> Self {
        let pack = |v: [i16; 2]| (v[0] as u16 as u32) | (v[1] as u16 as u32) << 16;
        Self::from_lanes(pack(l0), pack(l1))
    }

    pub fn from_i32x2(l0: i32, l1: i32) -> Self {
        Self::from_lanes(l0 as u32, l1 as u32)
    }

    pub fn from_f32x2(l0: f32, l1: f32) -> Self {
        Self::from_lanes(l0.to_bits(), l1.to_bits())
    }

    pub fn i32_lane(self, i: usize) -> i32 {
        self.lane(i) as i32
    }

    pub fn f32_lane(self, i: usize) -> f32 {
        f32::from_bits(self.lane(i))
    }
}

#[inline]
fn map2(a: PEWord, b: PEWord, f: impl Fn(u32, u32) -> u32) -> PEWord {
    PEWord::from_lanes(f(a.lane(0), b.lane(0)), f(a.lane(1), b.lane(1)))
}

/// Sign-extends the low 24 bits of `x`.
#[inline]
pub const fn sx24(x: u32) -> i32 {
    ((x << 8) as i32) >> 8
}

pub const INT24_MIN: i32 = -(1 << 23);
pub const INT24_MAX: i32 = (1 << 23) - 1;

/// Per lane: four signed byte products summed into a sign-extended 24-bit
/// result.
pub fn op_sml8(a: PEWord, b: PEWord) -> PEWord {
    map2(a, b, |x, y| {
        let (x, y) = (x.to_le_bytes(), y.to_le_bytes());
        let s: i32 = (0..4).map(|i| x[i] as i8 as i32 * y[i] as i8 as i32).sum();
        sx24(s as u32) as u32
    })
}

/// Per lane: 24-bit add, wrapping modulo 2^24.
pub fn op_ad24(a: PEWord, b: PEWord) -> PEWord {
    map2(a, b, |x, y| sx24(x.wrapping_add(y)) as u32)
}

/// Per lane: two signed 16-bit values times the two low signed bytes of `b`,
/// paired by position.
pub fn op_sml16(a: PEWord, b: PEWord) -> PEWord {
    map2(a, b, |x, y| {
        let a0 = x as u16 as i16 as i32;
        let a1 = (x >> 16) as u16 as i16 as i32;
        let b0 = y as u8 as i8 as i32;
        let b1 = (y >> 8) as u8 as i8 as i32;
        (a0 * b0 + a1 * b1) as u32
    })
}

/// Decodes two 6-bit weights (`ql` nibbles low/high, `qh` crumbs in bits
/// 0-1 / 2-3) and scales them, giving 16-bit intermediates.
pub fn op_cvt86(ql_nibbles: u8, qh_crumbs: u8, scale: i8) -> [i16; 2] {
    let q0 = ((ql_nibbles & 0xf) | (qh_crumbs & 3) << 4) as i16 - 32;
    let q1 = ((ql_nibbles >> 4) | ((qh_crumbs >> 2) & 3) << 4) as i16 - 32;
    [q0 * scale as i16, q1 * scale as i16]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cvt53 {
    pub scales5: [i8; 16],
    pub q3: [i8; 16],
}

/// Reconfiguration for Q3_K: 6-bit scale codes become signed 5-bit scales
/// (`floor((code - 32) / 2)`, to be compensated by doubling the super-scale),
/// and sixteen 2-bit + 1-bit fields become signed 3-bit quants.
pub fn op_cvt53(scales6: [u8; 16], qs2: u32, qh1: u16) -> Cvt53 {
    let mut out = Cvt53 {
        scales5: [0; 16],
        q3: [0; 16],
    };
    for (i, &code) in scales6.iter().enumerate() {
        let s = (code & 0x3f) as i8 - 32;
        out.scales5[i] = s >> 1;
        let low2 = ((qs2 >> (2 * i)) & 3) as i8;
        let h = ((qh1 >> i) & 1) as i8;
        out.q3[i] = (low2 | h << 2) - 4;
    }
    out
}

/// Per lane fused multiply-add, one rounding.
pub fn op_fma32x2(a: PEWord, b: PEWord, c: PEWord) -> PEWord {
    let f = |i| {
        a.f32_lane(i)
            .mul_add(b.f32_lane(i), c.f32_lane(i))
            .to_bits()
    };
    PEWord::from_lanes(f(0), f(1))
}

// ---- golden vectors -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Sml8,
    Ad24,
    Sml16,
    Cvt86,
    Cvt53,
    Fma32x2,
}

impl Opcode {
    pub const ALL: [Opcode; 6] = [
        Self::Sml8,
        Self::Ad24,
        Self::Sml16,
        Self::Cvt86,
        Self::Cvt53,
        Self::Fma32x2,
    ];

    pub const fn arity(self) -> usize {
        match self {
            Self::Sml8 | Self::Ad24 | Self::Sml16 => 2,
            Self::Cvt86 | Self::Cvt53 | Self::Fma32x2 => 3,
        }
    }

    pub const fn mnemonic(self) -> &'static str {
        match self {
            Self::Sml8 => "SML8",
            Self::Ad24 => "AD24",
            Self::Sml16 => "SML16",
            Self::Cvt86 => "CVT86",
            Self::Cvt53 => "CVT53",
            Self::Fma32x2 => "FMA32X2",
        }
    }
}

impl FromStr for Opcode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.mnemonic().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Format(format!("unknown opcode `{s}`")))
    }
}

/// Packs sixteen 6-bit codes, code `i` at bit `6i`.
pub fn pack_codes6(c: [u8; 16]) -> u128 {
    c.iter()
        .enumerate()
        .fold(0, |acc, (i, &v)| acc | ((v & 0x3f) as u128) << (6 * i))
}

pub fn unpack_codes6(x: u128) -> [u8; 16] {
    std::array::from_fn(|i| ((x >> (6 * i)) & 0x3f) as u8)
}

/// Evaluates one golden case. Operands and result use these encodings:
/// PEWord ops take and return the raw 64-bit word; CVT86 takes
/// `(ql byte, qh crumbs, scale byte)` and returns two i16 packed low-first;
/// CVT53 takes `(packed 6-bit codes, qs2, qh1)` and returns
/// `scales5 << 48 | q3`, with 5-bit and 3-bit two's-complement fields
/// packed low-first.
pub fn eval(op: Opcode, ins: &[u128]) -> Result<u128> {
    if ins.len() != op.arity() {
        return Err(Error::Format(format!(
            "{} takes {} operands, got {}",
            op.mnemonic(),
            op.arity(),
            ins.len()
        )));
    }
    let w = |i: usize| PEWord(ins[i] as u64);
    Ok(match op {
        Opcode::Sml8 => op_sml8(w(0), w(1)).0 as u128,
        Opcode::Ad24 => op_ad24(w(0), w(1)).0 as u128,
        Opcode::Sml16 => op_sml16(w(0), w(1)).0 as u128,
        Opcode::Fma32x2 => op_fma32x2(w(0), w(1), w(2)).0 as u128,
        Opcode::Cvt86 => {
            let r = op_cvt86(ins[0] as u8, ins[1] as u8 & 0xf, ins[2] as u8 as i8);
            (r[0] as u16 as u128) | (r[1] as u16 as u128) << 16
        }
        Opcode::Cvt53 => {
            let r = op_cvt53(unpack_codes6(ins[0]), ins[1] as u32, ins[2] as u16);
            let s5 = r.scales5.iter().enumerate().fold(0u128, |acc, (i, &s)| {
                acc | ((s as u8 & 0x1f) as u128) << (5 * i)
            });
            let q3 = r.q3.iter().enumerate().fold(0u128, |acc, (i, &q)| {
                acc | ((q as u8 & 7) as u128) << (3 * i)
            });
            s5 << 48 | q3
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenCase {
    pub op: Opcode,
    pub ins: Vec<u128>,
    pub out: u128,
}

impl fmt::Display for GoldenCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op.mnemonic())?;
        for x in &self.ins {
            write!(f, " {x:x}")?;
        }
        write!(f, " -> {:x}", self.out)
    }
}

pub fn parse_golden(text: &str) -> Result<Vec<GoldenCase>> {
    let mut cases = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::Fixture {
            line: i + 1,
            message,
        };
        let (lhs, rhs) = line
            .split_once("->")
            .ok_or_else(|| bad("missing `->`".into()))?;
        let mut toks = lhs.split_whitespace();
        let op: Opcode = toks
            .next()
            .ok_or_else(|| bad("missing opcode".into()))?
            .parse()
            .map_err(|e: Error| bad(e.to_string()))?;
        let hex = |s: &str| u128::from_str_radix(s, 16).map_err(|e| bad(format!("`{s}`: {e}")));
        let ins = toks.map(hex).collect::<Result<Vec<_>>>()?;
        if ins.len() != op.arity() {
            return Err(bad(format!(
                "{} takes {} operands",
                op.mnemonic(),
                op.arity()
            )));
        }
        cases.push(GoldenCase {
            op,
            ins,
            out: hex(rhs.trim())?,
        });
    }
    Ok(cases)
}

pub fn format_golden(cases: &[GoldenCase]) -> String {
    cases.iter().map(|c| format!("{c}\n")).collect()
}

/// Hand-picked edge cases followed by `n_random` seeded random cases per
/// opcode. Output is a pure function of `seed`.
pub fn generate_golden(seed: u64, n_random: usize) -> Vec<GoldenCase> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut fixed: Vec<(Opcode, Vec<u128>)> = vec![
        (
            Opcode::Sml8,
            vec![
                PEWord::from_i8x4([1, 2, 3, 4], [-1, 2, -3, 4]).0 as u128,
                PEWord::from_i8x4([5, 6, 7, 8], [5, -6, 7, 8]).0 as u128,
            ],
        ),
        (
            Opcode::Sml8,
            vec![0x8080_8080_8080_8080, 0x8080_8080_8080_8080],
        ),
        (
            Opcode::Ad24,
            vec![0x0000_0001_007f_ffff, 0x0000_0000_0000_0001],
        ),
        (
            Opcode::Ad24,
            vec![
                PEWord::from_i32x2(5, -5).0 as u128,
                PEWord::from_i32x2(7, 7).0 as u128,
            ],
        ),
        (
            Opcode::Sml16,
            vec![
                PEWord::from_i16x2([100, -200], [-4096, 4064]).0 as u128,
                PEWord::from_i8x4([3, 4, 0, 0], [-128, 127, 0, 0]).0 as u128,
            ],
        ),
        (Opcode::Cvt86, vec![0x0f, 0x01, 0x03]),
        (Opcode::Cvt86, vec![0x00, 0x00, 0xfe]),
        (
            Opcode::Cvt53,
            vec![pack_codes6([63; 16]), 0xffff_ffff, 0xffff],
        ),
        (Opcode::Cvt53, vec![pack_codes6([0; 16]), 0, 0]),
        (
            Opcode::Fma32x2,
            vec![
                PEWord::from_f32x2(1.0, 1.0).0 as u128,
                PEWord::from_f32x2(1.0, 1.0).0 as u128,
                0,
            ],
        ),
    ];
    for op in Opcode::ALL {
        for _ in 0..n_random {
            let ins = match op {
                Opcode::Cvt86 => vec![
                    rng.gen::<u8>() as u128,
                    rng.gen_range(0..16),
                    rng.gen::<u8>() as u128,
                ],
                Opcode::Cvt53 => vec![
                    pack_codes6(std::array::from_fn(|_| rng.gen_range(0..64))),
                    rng.gen::<u32>() as u128,
                    rng.gen::<u16>() as u128,
                ],
                Opcode::Fma32x2 => (0..3)
                    .map(|_| {
                        let mut f = || rng.gen_range(-1.0e3f32..1.0e3);
                        PEWord::from_f32x2(f(), f()).0 as u128
                    })
                    .collect(),
                _ => (0..2).map(|_| rng.gen::<u64>() as u128).collect(),
            };
            fixed.push((op, ins));
        }
    }
    fixed
        .into_iter()
        .map(|(op, ins)| {
            let out = eval(op, &ins).expect("arity matches");
            GoldenCase { op, ins, out }
        })
        .collect()
}
