//! Self-check suites behind `cgla-sim verify`.
//!
//! Each kernel path is run against the reference dot on seeded random
//! tensors, and the bundled ISA golden vectors are replayed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::isa::{eval, parse_golden};
use crate::kernels::{exec_dot_with, CycleParams};
use crate::quantfmt::{q3k_subdots, quantize, ref_dot, QuantFormat, QuantTensor};

pub const GOLDEN: &str = include_str!("../tests/data/isa_golden.txt");

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SuiteResult {
    pub cases: u64,
    pub failures: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub first_failures: Vec<String>,
}

impl SuiteResult {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first_failures.len() < 5 {
                self.first_failures.push(what());
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VerifySummary {
    pub seed: u64,
    pub suites: BTreeMap<String, SuiteResult>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.suites.values().all(|s| s.failures == 0)
    }
}

fn random_values(r: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let scale = 10f32.powi(r.gen_range(-3..3));
    (0..n).map(|_| r.gen_range(-1.0f32..1.0) * scale).collect()
}

fn pair(r: &mut ChaCha8Rng, f: QuantFormat, blocks: usize) -> Result<(QuantTensor, QuantTensor)> {
    let n = blocks * f.block_elems();
    let w = quantize(f, &random_values(r, n))?;
    let a = quantize(f.activation_format(), &random_values(r, n))?;
    Ok((w, a))
}

/// Q8_0, Q6_K and FP16 must be bit-identical to the reference. Q3_K must
/// differ by exactly the odd-scale term, checked one super-block at a time.
fn kernel_suite(f: QuantFormat, r: &mut ChaCha8Rng, cases: u64) -> Result<SuiteResult> {
    let mut s = SuiteResult::default();
    let params = CycleParams::default();
    for i in 0..cases {
        let blocks = if f == QuantFormat::Q3K {
            1
        } else {
            r.gen_range(1..8)
        };
        let (w, a) = pair(r, f, blocks)?;
        let want = ref_dot(f, &w, &a)?;
        let slots = if f == QuantFormat::F16 {
            r.gen_range(1..=8)
        } else {
            1
        };
        let got = exec_dot_with(f, &w, &a, &params, slots)?;
        let ok = match (&w, &a) {
            (QuantTensor::Q3K(wb), QuantTensor::Q8K(ab)) => {
                let (wb, ab) = (&wb[0], &ab[0]);
                let sd = q3k_subdots(wb, ab);
                let corr: i64 = (0..16)
                    .map(|j| i64::from(wb.scale(j).rem_euclid(2)) * i64::from(sd[j]))
                    .sum();
                let k = wb.d.to_f64() * f64::from(ab.d);
                want.partials[0] - got.integer_partials[0] == corr
                    && want.value - got.value == k * corr as f64
            }
            _ => {
                got.value.to_bits() == want.value.to_bits() && got.integer_partials == want.partials
            }
        };
        s.check(ok, || {
            format!("case {i}: exec {} ref {}", got.value, want.value)
        });
    }
    Ok(s)
}

fn isa_suite() -> Result<SuiteResult> {
    let mut s = SuiteResult::default();
    for c in parse_golden(GOLDEN)? {
        let got = eval(c.op, &c.ins)?;
        s.check(got == c.out, || format!("{c}: got {got:x}"));
    }
    Ok(s)
}

pub fn run(seed: u64, cases_per_format: u64) -> Result<VerifySummary> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut out = VerifySummary {
        seed,
        ..Default::default()
    };
    for f in QuantFormat::KERNELS {
        out.suites
            .insert(f.name().into(), kernel_suite(f, &mut r, cases_per_format)?);
    }
    out.suites.insert("ISA".into(), isa_suite()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    #[test]
    fn build_passes() {
        let v = super::run(1, 50).unwrap();
        assert!(v.passed(), "{v:?}");
        assert_eq!(v.suites.len(), 5);
        assert!(v.suites["ISA"].cases > 100);
    }
}
