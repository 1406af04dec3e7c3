//! Lanes, LMMs, DMA and PIO costs, and the power model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CycleParams, KernelDescriptor};
use crate::quantfmt::QuantFormat;
use crate::workload::HostTaskKind;

pub const KIB: u64 = 1024;
pub const LMM_MIN: u64 = 8 * KIB;
pub const LMM_MAX: u64 = 512 * KIB;
/// LMM size the note-c kernel powers refer to.
pub const LMM_REF: u64 = 64 * KIB;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmaParams {
    pub setup_s: f64,
    #[serde(rename = "bandwidth_Bps")]
    pub bandwidth_bps: f64,
    /// Host-side copy rate into the contiguous staging block; `None` means
    /// free.
    #[serde(rename = "gather_Bps")]
    pub gather_bps: Option<f64>,
    /// Largest weight payload one call may stage.
    pub max_transfer_bytes: u64,
    pub buffer_bytes: u64,
    pub coalesce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PioWords {
    pub base: f64,
    pub per_pe: f64,
}

impl PioWords {
    pub fn words(&self, k: &KernelDescriptor) -> f64 {
        self.base + self.per_pe * k.pe_used() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PioParams {
    pub word_s: f64,
    /// Written once per offloaded call.
    pub conf: PioWords,
    /// Written once per offloaded call.
    pub regv: PioWords,
    /// Written once per LMM tile.
    pub range: PioWords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PioKind {
    Conf,
    Regv,
    Range,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub kernel_watts: BTreeMap<QuantFormat, f64>,
    pub lmm_watts_per_byte: f64,
    pub host_idle_watts: f64,
    pub host_active_watts: f64,
}

impl PowerModel {
    pub fn note_c() -> BTreeMap<QuantFormat, f64> {
        BTreeMap::from([
            (QuantFormat::F16, 2.16),
            (QuantFormat::Q8_0, 4.41),
            (QuantFormat::Q3K, 4.88),
            (QuantFormat::Q6K, 6.1),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostParams {
    /// Host work serialized per offloaded call (driver, sync, dispatch).
    pub serial_s_per_offload: f64,
    /// Extra fraction of the serial work per active lane beyond one.
    pub contention_penalty: f64,
    /// Seconds per element for each host task.
    pub task_s_per_elem: BTreeMap<HostTaskKind, f64>,
    /// Seconds per multiply-accumulate for dot products kept on the host.
    pub mac_s: BTreeMap<QuantFormat, f64>,
}

/// Buffer lengths of the transfer mix the coalescing factors refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMix {
    pub load: Vec<u64>,
    pub drain: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    pub lanes_total: u32,
    pub lanes_used: u32,
    pub pes_per_lane: u32,
    pub lmm_bytes: u64,
    pub clock_hz: f64,
    pub cycle: CycleParams,
    pub dma: DmaParams,
    pub pio: PioParams,
    pub power: PowerModel,
    pub host: HostParams,
    pub reference_mix: Option<TransferMix>,
}

impl MachineConfig {
    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.lanes_total == 0 || self.lanes_total > 8 {
            return Err(Error::config("lanes_total", "must be in 1..=8"));
        }
        if self.lanes_used == 0 || self.lanes_used > self.lanes_total {
            return Err(Error::config("lanes_used", "must be in 1..=lanes_total"));
        }
        check_lmm(self.lmm_bytes)?;
        if !(self.clock_hz > 0.0) {
            return Err(Error::config("clock_hz", "must be positive"));
        }
        if !(self.cycle.issue_interval > 0.0) {
            return Err(Error::config("cycle.issue_interval", "must be positive"));
        }
        if !(self.dma.bandwidth_bps > 0.0) {
            return Err(Error::config("dma.bandwidth_Bps", "must be positive"));
        }
        if self.dma.gather_bps.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::config("dma.gather_Bps", "must be positive"));
        }
        let nonneg = [
            ("dma.setup_s", self.dma.setup_s),
            ("pio.word_s", self.pio.word_s),
            ("power.lmm_watts_per_byte", self.power.lmm_watts_per_byte),
            ("power.host_idle_watts", self.power.host_idle_watts),
            ("power.host_active_watts", self.power.host_active_watts),
            ("host.serial_s_per_offload", self.host.serial_s_per_offload),
            ("host.contention_penalty", self.host.contention_penalty),
        ];
        for (field, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::config(field, "must be nonnegative"));
            }
        }
        for f in QuantFormat::KERNELS {
            match self.power.kernel_watts.get(&f) {
                Some(w) if *w >= 0.0 => {}
                _ => {
                    return Err(Error::config(
                        format!("power.kernel_watts.{f}"),
                        "missing or negative",
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| Error::config("$", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("machine config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn with_lanes(&self, lanes: u32) -> Self {
        Self {
            lanes_used: lanes,
            ..self.clone()
        }
    }

    pub fn with_lmm(&self, lmm_bytes: u64) -> Self {
        Self {
            lmm_bytes,
            ..self.clone()
        }
    }
}

pub fn check_lmm(bytes: u64) -> Result<()> {
    if !bytes.is_power_of_two() || !(LMM_MIN..=LMM_MAX).contains(&bytes) {
        return Err(Error::config(
            "lmm_bytes",
            format!("{bytes} is not a power of two in 8 KiB..=512 KiB"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Load,
    Drain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    /// `(offset, length)` host regions.
    pub buffers: Vec<(u64, u64)>,
    pub coalesced: bool,
    pub direction: Direction,
}

impl TransferPlan {
    /// Back-to-back buffers of the given lengths; zero lengths are dropped.
    pub fn from_lengths(lengths: &[u64], coalesced: bool, direction: Direction) -> Self {
        let mut off = 0;
        let buffers = lengths
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| {
                let b = (off, l);
                off += l;
                b
            })
            .collect();
        Self {
            buffers,
            coalesced,
            direction,
        }
    }

    pub fn total(&self) -> u64 {
        self.buffers.iter().map(|b| b.1).sum()
    }
}

/// Naive: one transaction per buffer. Coalesced: one transaction plus the
/// host-side gather copy of everything.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn dma_time(plan: &TransferPlan, cfg: &MachineConfig) -> Result<f64> {
    let d = &cfg.dma;
    if !(d.bandwidth_bps > 0.0) {
        return Err(Error::config("dma.bandwidth_Bps", "must be positive"));
    }
    if plan.buffers.is_empty() {
        return Ok(0.0);
    }
    let total = plan.total() as f64;
    Ok(if plan.coalesced {
        let gather = d.gather_bps.map_or(0.0, |g| total / g);
        d.setup_s + total / d.bandwidth_bps + gather
    } else {
        plan.buffers
            .iter()
            .map(|&(_, len)| d.setup_s + len as f64 / d.bandwidth_bps)
            .sum()
    })
}

pub fn pio_words(kind: PioKind, kernel: &KernelDescriptor, cfg: &MachineConfig) -> f64 {
    match kind {
        PioKind::Conf => cfg.pio.conf.words(kernel),
        PioKind::Regv => cfg.pio.regv.words(kernel),
        PioKind::Range => cfg.pio.range.words(kernel),
    }
}

pub fn pio_time(kind: PioKind, kernel: &KernelDescriptor, cfg: &MachineConfig) -> f64 {
    pio_words(kind, kernel, cfg) * cfg.pio.word_s
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Step {
    pub load_s: f64,
    pub exec_s: f64,
    pub drain_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Overlap {
    pub total_s: f64,
    pub load_s: f64,
    pub exec_s: f64,
    pub drain_s: f64,
}

/// Double-buffered schedule: step `i+1` loads while step `i` executes, and
/// only the last drain is exposed. An overlapped slot charges its exec time
/// to EXEC and only the load time beyond it to LOAD.
pub fn overlap_schedule(steps: &[Step]) -> Overlap {
    let Some(first) = steps.first() else {
        return Overlap::default();
    };
    let last = steps[steps.len() - 1];
    let mut o = Overlap {
        load_s: first.load_s,
        ..Default::default()
    };
    for w in steps.windows(2) {
        o.exec_s += w[0].exec_s;
        o.load_s += (w[1].load_s - w[0].exec_s).max(0.0);
    }
    o.exec_s += last.exec_s;
    o.drain_s = last.drain_s;
    o.total_s = o.load_s + o.exec_s + o.drain_s;
    o
}

/// `overlap_schedule` for `n` copies of `step` whose drains are all zero
/// except the last, which drains `drain_s`; constant time in `n`.
pub fn overlap_uniform(n: u64, step: Step, drain_s: f64) -> Overlap {
    if n == 0 {
        return Overlap::default();
    }
    let (l, e) = (step.load_s, step.exec_s);
    let mid = (n - 1) as f64;
    let mut o = Overlap {
        load_s: l,
        exec_s: e,
        drain_s,
        ..Default::default()
    };
    o.exec_s += mid * e;
    o.load_s += mid * (l - e).max(0.0);
    o.total_s = o.load_s + o.exec_s + o.drain_s;
    o
}

/// Accelerator power while `kernel` runs, including the idle host.
pub fn power_of(kernel: QuantFormat, cfg: &MachineConfig) -> f64 {
    let kw = cfg.power.kernel_watts.get(&kernel).copied().unwrap_or(0.0);
    let lmm = (cfg.lmm_bytes as f64 - LMM_REF as f64)
        * cfg.pes_per_lane as f64
        * cfg.power.lmm_watts_per_byte;
    cfg.lanes_used as f64 * (kw + lmm).max(0.0) + cfg.power.host_idle_watts
}
