use half::f16;

pub const QK8_0: usize = 32;
pub const QK_K: usize = 256;
/// Elements in one FP16 burst.
pub const FP16_BURST: usize = 16;
pub const K_SCALE_SIZE: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ8_0 {
    pub d: f16,
    pub qs: [i8; QK8_0],
}

impl BlockQ8_0 {
    pub const BYTES: usize = 2 + QK8_0;

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend(self.qs.iter().map(|&q| q as u8));
    }

    pub fn read(b: &[u8]) -> Self {
        let mut qs = [0i8; QK8_0];
        for (q, &x) in qs.iter_mut().zip(&b[2..Self::BYTES]) {
            *q = x as i8;
        }
        Self {
            d: f16::from_le_bytes([b[0], b[1]]),
            qs,
        }
    }
}

/// 6-bit super-block. Byte order follows ggml: `ql`, `qh`, `scales`, `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ6K {
    pub ql: [u8; QK_K / 2],
    pub qh: [u8; QK_K / 4],
    pub scales: [i8; QK_K / 16],
    pub d: f16,
}

impl BlockQ6K {
    pub const BYTES: usize = QK_K / 2 + QK_K / 4 + QK_K / 16 + 2;

    /// Unsigned 6-bit code of element `e` (before the -32 bias).
    #[inline]
    pub fn code(&self, e: usize) -> u8 {
        let (n, r) = (e / 128, e % 128);
        let (quarter, l) = (r / 32, r % 32);
        let qlb = self.ql[n * 64 + l + (quarter & 1) * 32];
        let lo = if quarter < 2 { qlb & 0xf } else { qlb >> 4 };
        let hi = (self.qh[n * 32 + l] >> (2 * quarter)) & 3;
        lo | (hi << 4)
    }

    /// Signed quant of element `e`, in [-32, 31].
    #[inline]
    pub fn quant(&self, e: usize) -> i8 {
        self.code(e) as i8 - 32
    }

    pub fn set_code(&mut self, e: usize, code: u8) {
        debug_assert!(code < 64);
        let (n, r) = (e / 128, e % 128);
        let (quarter, l) = (r / 32, r % 32);
        let qi = n * 64 + l + (quarter & 1) * 32;
        if quarter < 2 {
            self.ql[qi] = (self.ql[qi] & 0xf0) | (code & 0xf);
        } else {
            self.ql[qi] = (self.ql[qi] & 0x0f) | ((code & 0xf) << 4);
        }
        let hi = n * 32 + l;
        let sh = 2 * quarter;
        self.qh[hi] = (self.qh[hi] & !(3 << sh)) | ((code >> 4) << sh);
    }

    pub fn zeroed() -> Self {
        Self {
            ql: [0; QK_K / 2],
            qh: [0; QK_K / 4],
            scales: [0; QK_K / 16],
            d: f16::ZERO,
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ql);
        out.extend_from_slice(&self.qh);
        out.extend(self.scales.iter().map(|&s| s as u8));
        out.extend_from_slice(&self.d.to_le_bytes());
    }

    pub fn read(b: &[u8]) -> Self {
        let mut blk = Self::zeroed();
        blk.ql.copy_from_slice(&b[..128]);
        blk.qh.copy_from_slice(&b[128..192]);
        for (s, &x) in blk.scales.iter_mut().zip(&b[192..208]) {
            *s = x as i8;
        }
        blk.d = f16::from_le_bytes([b[208], b[209]]);
        blk
    }
}

/// 3-bit super-block: `hmask`, `qs`, packed 6-bit `scales`, `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ3K {
    pub hmask: [u8; QK_K / 8],
    pub qs: [u8; QK_K / 4],
    pub scales: [u8; K_SCALE_SIZE],
    pub d: f16,
}

impl BlockQ3K {
    pub const BYTES: usize = QK_K / 8 + QK_K / 4 + K_SCALE_SIZE + 2;

    #[inline]
    pub fn low2(&self, e: usize) -> u8 {
        let (n, r) = (e / 128, e % 128);
        let (j, l) = (r / 32, r % 32);
        (self.qs[n * 32 + l] >> (2 * j)) & 3
    }

    #[inline]
    pub fn high1(&self, e: usize) -> u8 {
        let (n, r) = (e / 128, e % 128);
        let (j, l) = (r / 32, r % 32);
        (self.hmask[l] >> (n * 4 + j)) & 1
    }

    /// Signed quant in [-4, 3].
    #[inline]
    pub fn quant(&self, e: usize) -> i8 {
        (self.low2(e) | (self.high1(e) << 2)) as i8 - 4
    }

    pub fn set_quant(&mut self, e: usize, q: i8) {
        debug_assert!((-4..=3).contains(&q));
        let code = (q + 4) as u8;
        let (n, r) = (e / 128, e % 128);
        let (j, l) = (r / 32, r % 32);
        let qi = n * 32 + l;
        self.qs[qi] = (self.qs[qi] & !(3 << (2 * j))) | ((code & 3) << (2 * j));
        let bit = n * 4 + j;
        self.hmask[l] = (self.hmask[l] & !(1 << bit)) | ((code >> 2) << bit);
    }

    /// The sixteen unsigned 6-bit scale codes.
    pub fn scale_codes(&self) -> [u8; 16] {
        unpack_scales6(&self.scales)
    }

    /// Effective signed sub-block scale `code - 32`.
    pub fn scale(&self, j: usize) -> i8 {
        self.scale_codes()[j] as i8 - 32
    }

    pub fn zeroed() -> Self {
        Self {
            hmask: [0; QK_K / 8],
            qs: [0; QK_K / 4],
            scales: [0; K_SCALE_SIZE],
            d: f16::ZERO,
        }
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.hmask);
        out.extend_from_slice(&self.qs);
        out.extend_from_slice(&self.scales);
        out.extend_from_slice(&self.d.to_le_bytes());
    }

    pub fn read(b: &[u8]) -> Self {
        let mut blk = Self::zeroed();
        blk.hmask.copy_from_slice(&b[..32]);
        blk.qs.copy_from_slice(&b[32..96]);
        blk.scales.copy_from_slice(&b[96..108]);
        blk.d = f16::from_le_bytes([b[108], b[109]]);
        blk
    }
}

/// Unpacks sixteen 6-bit codes from the 12-byte k-quant layout: low nibbles
/// live in bytes 0..8 (two per byte), the top two bits in bytes 8..12.
pub fn unpack_scales6(p: &[u8; K_SCALE_SIZE]) -> [u8; 16] {
    let mut out = [0u8; 16];
    for (j, o) in out.iter_mut().enumerate() {
        let lo = if j < 8 { p[j] & 0xf } else { p[j - 8] >> 4 };
        let hi = (p[8 + j % 4] >> (2 * (j / 4))) & 3;
        *o = lo | (hi << 4);
    }
    out
}

pub fn pack_scales6(codes: &[u8; 16]) -> [u8; K_SCALE_SIZE] {
    let mut p = [0u8; K_SCALE_SIZE];
    for (j, &c) in codes.iter().enumerate() {
        debug_assert!(c < 64);
        if j < 8 {
            p[j] |= c & 0xf;
        } else {
            p[j - 8] |= (c & 0xf) << 4;
        }
        p[8 + j % 4] |= (c >> 4) << (2 * (j / 4));
    }
    p
}

/// 8-bit activation companion for the K formats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ8K {
    pub d: f32,
    pub qs: [i8; QK_K],
    pub bsums: [i16; QK_K / 16],
}

impl BlockQ8K {
    pub const BYTES: usize = 4 + QK_K + 2 * (QK_K / 16);

    /// Builds a block from quants, recomputing `bsums`.
    pub fn new(d: f32, qs: [i8; QK_K]) -> Self {
        let mut bsums = [0i16; QK_K / 16];
        for (j, s) in bsums.iter_mut().enumerate() {
            *s = qs[j * 16..(j + 1) * 16].iter().map(|&q| q as i16).sum();
        }
        Self { d, qs, bsums }
    }

    pub fn bsums_consistent(&self) -> bool {
        *self == Self::new(self.d, self.qs)
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend(self.qs.iter().map(|&q| q as u8));
        for s in &self.bsums {
            out.extend_from_slice(&s.to_le_bytes());
        }
    }

    pub fn read(b: &[u8]) -> Self {
        let d = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let mut qs = [0i8; QK_K];
        for (q, &x) in qs.iter_mut().zip(&b[4..4 + QK_K]) {
            *q = x as i8;
        }
        let mut bsums = [0i16; QK_K / 16];
        for (j, s) in bsums.iter_mut().enumerate() {
            let o = 4 + QK_K + 2 * j;
            *s = i16::from_le_bytes([b[o], b[o + 1]]);
        }
        Self { d, qs, bsums }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_sizes() {
        assert_eq!(BlockQ8_0::BYTES, 34);
        assert_eq!(BlockQ6K::BYTES, 210);
        assert_eq!(BlockQ3K::BYTES, 110);
        assert_eq!(BlockQ8K::BYTES, 292);
    }

    #[test]
    fn scales6_roundtrip_all_positions() {
        for j in 0..16 {
            for c in 0..64u8 {
                let mut codes = [0u8; 16];
                codes[j] = c;
                codes[(j + 5) % 16] = 63 - c;
                assert_eq!(unpack_scales6(&pack_scales6(&codes)), codes);
            }
        }
    }

    #[test]
    fn q6k_set_get() {
        let mut b = BlockQ6K::zeroed();
        for e in 0..QK_K {
            b.set_code(e, (e * 7 % 64) as u8);
        }
        for e in 0..QK_K {
            assert_eq!(b.code(e), (e * 7 % 64) as u8);
        }
    }

    #[test]
    fn q3k_set_get() {
        let mut b = BlockQ3K::zeroed();
        for e in 0..QK_K {
            b.set_quant(e, (e % 8) as i8 - 4);
        }
        for e in 0..QK_K {
            assert_eq!(b.quant(e), (e % 8) as i8 - 4);
        }
    }
}
