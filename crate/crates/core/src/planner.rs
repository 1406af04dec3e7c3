//! Which kernel types and calls run on the accelerator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{describe_kernel, row_bytes, KernelDescriptor};
use crate::machine::MachineConfig;
use crate::perf::{energy_metrics, simulate_trace};
use crate::quantfmt::QuantFormat;
use crate::workload::{KernelCall, WorkloadTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Capacity,
    Pdp,
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capacity" => Ok(Self::Capacity),
            "pdp" => Ok(Self::Pdp),
            _ => Err(Error::config("policy", format!("unknown policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadPlan {
    pub policy: Policy,
    pub per_type: BTreeMap<QuantFormat, bool>,
    /// Trace call indices kept on the host even though their type is
    /// offloaded.
    #[serde(default)]
    pub host_calls: BTreeSet<usize>,
}

impl OffloadPlan {
    pub fn none(policy: Policy) -> Self {
        Self {
            policy,
            per_type: BTreeMap::new(),
            host_calls: BTreeSet::new(),
        }
    }

    pub fn type_on(&self, f: QuantFormat) -> bool {
        self.per_type.get(&f).copied().unwrap_or(false)
    }

    pub fn offloads(&self, index: usize, call: &KernelCall) -> bool {
        self.type_on(call.format) && !self.host_calls.contains(&index)
    }

    pub fn offloaded_types(&self) -> Vec<QuantFormat> {
        self.per_type
            .iter()
            .filter(|e| *e.1)
            .map(|e| *e.0)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config("$", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        std::fs::write(p, self.to_json()).map_err(|e| Error::io(p.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
        Self::from_json(&text)
    }
}

/// Shares of dot products (output rows times tokens) run on the accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadRatioReport {
    /// Only types present in the trace appear.
    pub per_type: BTreeMap<QuantFormat, f64>,
    pub total: f64,
}

/// Bytes one LMM needs to run `call` with `kernel`'s tile layout.
pub fn footprint(call: &KernelCall, kernel: &KernelDescriptor) -> u64 {
    kernel.lmm_footprint(call.cols)
}

/// Whether a call can be offloaded at all: its tile must fit an LMM and its
/// weights must fit one DMA transfer.
pub fn call_fits(call: &KernelCall, cfg: &MachineConfig) -> Result<bool> {
    let k = describe_kernel(call.format)?;
    let weights = call.weight_rows * row_bytes(call.format, call.cols);
    Ok(footprint(call, &k) <= cfg.lmm_bytes
        && weights <= cfg.dma.max_transfer_bytes
        && weights
            + call.act_vectors
                * call.tokens
                * row_bytes(call.format.activation_format(), call.cols)
            <= cfg.dma.buffer_bytes)
}

/// Types with at least one fitting call, and the calls that do not fit.
fn capacity(
    trace: &WorkloadTrace,
    cfg: &MachineConfig,
) -> Result<(BTreeSet<QuantFormat>, BTreeSet<usize>)> {
    let mut ok = BTreeSet::new();
    let mut misfits = BTreeSet::new();
    for (i, c) in trace.calls.iter().enumerate() {
        if call_fits(c, cfg)? {
            ok.insert(c.format);
        } else {
            misfits.insert(i);
        }
    }
    Ok((ok, misfits))
}

pub fn plan_offload(
    trace: &WorkloadTrace,
    cfg: &MachineConfig,
    policy: Policy,
) -> Result<OffloadPlan> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let (ok, host_calls) = capacity(trace, cfg)?;
    let present: BTreeSet<QuantFormat> = trace.calls.iter().map(|c| c.format).collect();
    let with = |on: &[QuantFormat]| OffloadPlan {
        policy,
        per_type: present.iter().map(|f| (*f, on.contains(f))).collect(),
        host_calls: host_calls.clone(),
    };
    let feasible: Vec<QuantFormat> = ok.into_iter().collect();
    if policy == Policy::Capacity {
        return Ok(with(&feasible));
    }
    // Subsets by size, then by mask, so a strict improvement is needed to
    // offload more types.
    let mut masks: Vec<u32> = (0..1u32 << feasible.len()).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    let mut best: Option<(f64, OffloadPlan)> = None;
    for m in masks {
        let on: Vec<QuantFormat> = feasible
            .iter()
            .enumerate()
            .filter(|(i, _)| m >> i & 1 == 1)
            .map(|(_, f)| *f)
            .collect();
        let plan = with(&on);
        let pdp = energy_metrics(&simulate_trace(trace, &plan, cfg)?, cfg).pdp_j;
        if best.as_ref().is_none_or(|b| pdp < b.0) {
            best = Some((pdp, plan));
        }
    }
    Ok(best.expect("at least the empty subset").1)
}

pub fn offload_ratio(plan: &OffloadPlan, trace: &WorkloadTrace) -> OffloadRatioReport {
    let mut by_type: BTreeMap<QuantFormat, (u64, u64)> = BTreeMap::new();
    for (i, c) in trace.calls.iter().enumerate() {
        let e = by_type.entry(c.format).or_default();
        e.1 += c.dots();
        if plan.offloads(i, c) {
            e.0 += c.dots();
        }
    }
    let ratio = |(on, all): (u64, u64)| {
        if all == 0 {
            0.0
        } else {
            on as f64 / all as f64
        }
    };
    let (on, all) = by_type.values().fold((0, 0), |a, v| (a.0 + v.0, a.1 + v.1));
    OffloadRatioReport {
        per_type: by_type.iter().map(|(f, v)| (*f, ratio(*v))).collect(),
        total: ratio((on, all)),
    }
}
