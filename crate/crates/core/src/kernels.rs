//! The four dot-product dataflows as mapped on the linear PE array.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isa::{self, PEWord};
use crate::quantfmt::{
    self, f16_to_f32, BlockQ3K, BlockQ6K, BlockQ8K, BlockQ8_0, QuantFormat, QuantTensor,
    FP16_BURST, QK_K,
};

/// Static mapping facts for one kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelDescriptor {
    pub format: QuantFormat,
    pub arith_units: u32,
    pub pe_stages: u32,
    pub replication: u32,
    pub elems_per_burst: u32,
    pub iterations_per_burst: u32,
    /// Weight rows staged together in one double-buffered LMM tile.
    pub tile_rows: u32,
    /// Separate host arrays a call reads; each is one DMA transaction when
    /// transfers are not coalesced.
    pub load_arrays: u32,
}

impl KernelDescriptor {
    pub fn pe_used(&self) -> u32 {
        self.arith_units
    }

    /// LMM bytes one double-buffered tile needs for rows of `cols` elements:
    /// the activation row, `tile_rows` weight rows, both doubled, plus one
    /// 32-bit output per staged row.
    pub fn lmm_footprint(&self, cols: u64) -> u64 {
        if cols == 0 {
            return 0;
        }
        let act = row_bytes(self.format.activation_format(), cols);
        let w = row_bytes(self.format, cols);
        let rows = self.tile_rows as u64;
        2 * (act + rows * w) + rows * 4
    }

    /// Host array sizes for `weight_rows` weight rows and `act_rows`
    /// activation rows of `cols` elements, in `load_arrays` order: weight
    /// arrays first, then activation arrays.
    pub fn array_bytes(&self, weight_rows: u64, act_rows: u64, cols: u64) -> Vec<u64> {
        let blocks = |f: QuantFormat| cols.div_ceil(f.block_elems() as u64);
        let (w, a): (&[u64], &[u64]) = match self.format {
            QuantFormat::F16 => (&[2], &[2]),
            QuantFormat::Q8_0 => (&[32, 2], &[32, 2]),
            QuantFormat::Q6K => (&[128, 64, 16, 2], &[256, 4, 32]),
            QuantFormat::Q3K => (&[32, 64, 12, 2], &[256, 4, 32]),
            QuantFormat::Q8K => (&[], &[]),
        };
        let (wb, ab) = if self.format == QuantFormat::F16 {
            (cols, cols)
        } else {
            (blocks(self.format), blocks(self.format.activation_format()))
        };
        w.iter()
            .map(|&x| x * wb * weight_rows)
            .chain(a.iter().map(|&x| x * ab * act_rows))
            .collect()
    }
}

/// Storage bytes of a row of `cols` elements, rounded up to whole blocks.
pub fn row_bytes(format: QuantFormat, cols: u64) -> u64 {
    let be = format.block_elems() as u64;
    cols.div_ceil(be) * format.block_bytes() as u64
}

pub fn describe_kernel(format: QuantFormat) -> Result<KernelDescriptor> {
    let (
        arith_units,
        pe_stages,
        replication,
        elems_per_burst,
        iterations_per_burst,
        tile_rows,
        load_arrays,
    ) = match format {
        QuantFormat::F16 => (22, 22, 1, 16, 1, 2, 2),
        QuantFormat::Q8_0 => (46, 12, 4, 32, 1, 8, 4),
        QuantFormat::Q6K => (64, 16, 4, 256, 16, 4, 7),
        QuantFormat::Q3K => (51, 13, 4, 256, 16, 4, 7),
        QuantFormat::Q8K => return Err(Error::UnsupportedFormat(format)),
    };
    Ok(KernelDescriptor {
        format,
        arith_units,
        pe_stages,
        replication,
        elems_per_burst,
        iterations_per_burst,
        tile_rows,
        load_arrays,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleParams {
    pub issue_interval: f64,
    /// Overrides the descriptor's replication when set.
    #[serde(default)]
    pub replication_effective: Option<u32>,
}

impl Default for CycleParams {
    fn default() -> Self {
        Self {
            issue_interval: 1.0,
            replication_effective: None,
        }
    }
}

pub fn bursts_for(desc: &KernelDescriptor, n_elems: u64, cfg: &CycleParams) -> u64 {
    let repl = cfg.replication_effective.unwrap_or(desc.replication).max(1) as u64;
    n_elems.div_ceil(desc.elems_per_burst as u64 * repl)
}

/// Pipeline fill plus issue slots for all bursts.
pub fn cycles_for(desc: &KernelDescriptor, n_elems: u64, cfg: &CycleParams) -> u64 {
    let issue = bursts_for(desc, n_elems, cfg) as f64
        * cfg.issue_interval
        * desc.iterations_per_burst as f64;
    desc.pe_stages as u64 + issue.ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DotResult {
    pub value: f64,
    pub integer_partials: Vec<i64>,
    pub cycles: u64,
    pub pe_used: u32,
}

pub fn exec_dot(
    format: QuantFormat,
    weights: &QuantTensor,
    acts: &QuantTensor,
) -> Result<DotResult> {
    exec_dot_with(format, weights, acts, &CycleParams::default(), 1)
}

/// `interleave` is the number of column-multithreading accumulator slots on
/// the FP16 path; other paths ignore it.
pub fn exec_dot_with(
    format: QuantFormat,
    weights: &QuantTensor,
    acts: &QuantTensor,
    params: &CycleParams,
    interleave: usize,
) -> Result<DotResult> {
    quantfmt::check_pair(format, weights, acts)?;
    let desc = describe_kernel(format)?;
    let (value, integer_partials) = match (weights, acts) {
        (QuantTensor::F16(w), QuantTensor::F16(a)) => {
            (fp16_path(w, a, interleave) as f64, Vec::new())
        }
        (QuantTensor::Q8_0(w), QuantTensor::Q8_0(a)) => q8_0_path(w, a),
        (QuantTensor::Q6K(w), QuantTensor::Q8K(a)) => q6k_path(w, a),
        (QuantTensor::Q3K(w), QuantTensor::Q8K(a)) => q3k_path(w, a),
        _ => unreachable!("checked by check_pair"),
    };
    Ok(DotResult {
        value,
        integer_partials,
        cycles: cycles_for(&desc, weights.len() as u64, params),
        pe_used: desc.pe_used(),
    })
}

fn f32_pair(x: &[half::f16]) -> PEWord {
    PEWord::from_f32x2(f16_to_f32(x[0].to_bits()), f16_to_f32(x[1].to_bits()))
}

/// Each burst runs eight FMA pairs into a fresh accumulator held in slot
/// `burst % interleave`. Slots only decide when a burst may issue; burst
/// sums are reduced in ascending burst order, so the slot count never
/// affects the value.
fn fp16_path(w: &[half::f16], a: &[half::f16], interleave: usize) -> f32 {
    let slots = interleave.max(1);
    let n_bursts = w.len() / FP16_BURST;
    let mut slot_out: Vec<Vec<(usize, f32)>> = vec![Vec::new(); slots];
    for b in 0..n_bursts {
        let wb = &w[b * FP16_BURST..(b + 1) * FP16_BURST];
        let ab = &a[b * FP16_BURST..(b + 1) * FP16_BURST];
        let mut acc = PEWord::default();
        for i in 0..FP16_BURST / 2 {
            acc = isa::op_fma32x2(f32_pair(&wb[2 * i..]), f32_pair(&ab[2 * i..]), acc);
        }
        slot_out[b % slots].push((b, acc.f32_lane(0) + acc.f32_lane(1)));
    }
    let mut sums: Vec<(usize, f32)> = slot_out.into_iter().flatten().collect();
    sums.sort_by_key(|&(b, _)| b);
    sums.into_iter().fold(0.0f32, |acc, (_, s)| acc + s)
}

/// Runs a 24-bit SML8/AD24 chain over byte-paired operands and returns the
/// two lane sums added together. Checks the chain never wrapped.
fn int8_chain(w: &[i8], a: &[i8]) -> i64 {
    debug_assert_eq!(w.len() % 8, 0);
    let mut acc = PEWord::default();
    let mut shadow = [0i64; 2];
    for (wc, ac) in w.chunks_exact(8).zip(a.chunks_exact(8)) {
        let ww = PEWord::from_i8x4(wc[..4].try_into().unwrap(), wc[4..].try_into().unwrap());
        let aw = PEWord::from_i8x4(ac[..4].try_into().unwrap(), ac[4..].try_into().unwrap());
        let p = isa::op_sml8(ww, aw);
        for (l, s) in shadow.iter_mut().enumerate() {
            *s += p.i32_lane(l) as i64;
        }
        acc = isa::op_ad24(acc, p);
    }
    for (l, &s) in shadow.iter().enumerate() {
        assert!(
            (isa::INT24_MIN as i64..=isa::INT24_MAX as i64).contains(&s)
                && acc.i32_lane(l) as i64 == s,
            "24-bit accumulator overflow in lane {l}"
        );
    }
    acc.i32_lane(0) as i64 + acc.i32_lane(1) as i64
}

fn q8_0_path(w: &[BlockQ8_0], a: &[BlockQ8_0]) -> (f64, Vec<i64>) {
    let mut acc = PEWord::default();
    let mut partials = Vec::with_capacity(w.len());
    for (bw, ba) in w.iter().zip(a) {
        let p = int8_chain(&bw.qs, &ba.qs);
        // final stage: one single-precision scale per block
        let scale = f16_to_f32(bw.d.to_bits()) * f16_to_f32(ba.d.to_bits());
        acc = isa::op_fma32x2(
            PEWord::from_f32x2(scale, 0.0),
            PEWord::from_f32x2(p as f32, 0.0),
            acc,
        );
        partials.push(p);
    }
    (acc.f32_lane(0) as f64, partials)
}

fn k_scale(d: half::f16, a: &BlockQ8K) -> f64 {
    f16_to_f32(d.to_bits()) as f64 * a.d as f64
}

fn q6k_path(w: &[BlockQ6K], a: &[BlockQ8K]) -> (f64, Vec<i64>) {
    let mut acc = 0.0f64;
    let mut partials = Vec::with_capacity(w.len());
    for (bw, ba) in w.iter().zip(a) {
        let mut lanes = [0i32; 2];
        for e in (0..QK_K).step_by(4) {
            let sc = bw.scales[e / 16];
            // the load unit hands CVT86 two consecutive elements at a time
            let mut mid = [0i16; 4];
            for pair in 0..2 {
                let (c0, c1) = (bw.code(e + 2 * pair), bw.code(e + 2 * pair + 1));
                let ql = (c0 & 0xf) | (c1 & 0xf) << 4;
                let qh = (c0 >> 4) | (c1 >> 4) << 2;
                let r = isa::op_cvt86(ql, qh, sc);
                mid[2 * pair] = r[0];
                mid[2 * pair + 1] = r[1];
            }
            let x = PEWord::from_i16x2([mid[0], mid[1]], [mid[2], mid[3]]);
            let q = &ba.qs[e..e + 4];
            let y = PEWord::from_i8x4([q[0], q[1], 0, 0], [q[2], q[3], 0, 0]);
            let p = isa::op_sml16(x, y);
            lanes[0] += p.i32_lane(0);
            lanes[1] += p.i32_lane(1);
        }
        let s = lanes[0] as i64 + lanes[1] as i64;
        acc = k_scale(bw.d, ba).mul_add(s as f64, acc);
        partials.push(s);
    }
    (acc, partials)
}

/// Gathers the 2-bit and 1-bit fields of sub-block `j` for CVT53.
fn q3k_fields(b: &BlockQ3K, j: usize) -> (u32, u16) {
    let mut qs2 = 0u32;
    let mut qh1 = 0u16;
    for i in 0..16 {
        qs2 |= (b.low2(16 * j + i) as u32) << (2 * i);
        qh1 |= (b.high1(16 * j + i) as u16) << i;
    }
    (qs2, qh1)
}

/// Q3_K after CVT53: 8-bit products `q3 * s5` go through the Q8_0 integer
/// flow, and the super-scale is doubled once per super-block. The reported
/// partial is `2 * sum(s5_j * subdot_j)`, directly comparable to the
/// reference partial.
fn q3k_path(w: &[BlockQ3K], a: &[BlockQ8K]) -> (f64, Vec<i64>) {
    let mut acc = 0.0f64;
    let mut partials = Vec::with_capacity(w.len());
    for (bw, ba) in w.iter().zip(a) {
        let codes = bw.scale_codes();
        let mut w8 = [0i8; QK_K];
        for j in 0..16 {
            let (qs2, qh1) = q3k_fields(bw, j);
            let cv = isa::op_cvt53(codes, qs2, qh1);
            for i in 0..16 {
                w8[16 * j + i] = cv.q3[i] * cv.scales5[j];
            }
        }
        let s5 = int8_chain(&w8, &ba.qs);
        let k2 = 2.0 * k_scale(bw.d, ba);
        acc = k2.mul_add(s5 as f64, acc);
        partials.push(2 * s5);
    }
    (acc, partials)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatVecResult {
    pub values: Vec<f64>,
    pub total_cycles: u64,
    pub bursts: u64,
}

/// Rows run one after another on one lane.
pub fn exec_matvec(
    format: QuantFormat,
    matrix: &[QuantTensor],
    vector: &QuantTensor,
) -> Result<MatVecResult> {
    if let Some(first) = matrix.first() {
        if let Some(i) = matrix.iter().position(|r| r.len() != first.len()) {
            return Err(Error::Shape(format!(
                "row {i} has {} elements, row 0 has {}",
                matrix[i].len(),
                first.len()
            )));
        }
    }
    let desc = describe_kernel(format)?;
    let params = CycleParams::default();
    let mut out = MatVecResult {
        values: Vec::with_capacity(matrix.len()),
        total_cycles: 0,
        bursts: 0,
    };
    for row in matrix {
        let r = exec_dot(format, row, vector)?;
        out.values.push(r.value);
        out.total_cycles += r.cycles;
        out.bursts += bursts_for(&desc, row.len() as u64, &params);
    }
    Ok(out)
}
