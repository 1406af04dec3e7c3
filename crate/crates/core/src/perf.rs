//! Phase breakdowns, energy metrics, LMM sweeps and lane scaling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{cycles_for, describe_kernel};
use crate::machine::{
    dma_time, overlap_uniform, pio_time, power_of, Direction, MachineConfig, Overlap, PioKind,
    Step, TransferPlan,
};
use crate::planner::{offload_ratio, plan_offload, OffloadPlan, OffloadRatioReport, Policy};
use crate::quantfmt::QuantFormat;
use crate::workload::{KernelCall, Stage, WorkloadTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Host,
    Load,
    Exec,
    Drain,
    Conf,
    Regv,
    Range,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Host,
        Phase::Load,
        Phase::Exec,
        Phase::Drain,
        Phase::Conf,
        Phase::Regv,
        Phase::Range,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Host => "HOST",
            Phase::Load => "LOAD",
            Phase::Exec => "EXEC",
            Phase::Drain => "DRAIN",
            Phase::Conf => "CONF",
            Phase::Regv => "REGV",
            Phase::Range => "RANGE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Phases {
    pub host_s: f64,
    pub load_s: f64,
    pub exec_s: f64,
    pub drain_s: f64,
    pub conf_s: f64,
    pub regv_s: f64,
    pub range_s: f64,
}

impl Phases {
    pub fn get(&self, p: Phase) -> f64 {
        match p {
            Phase::Host => self.host_s,
            Phase::Load => self.load_s,
            Phase::Exec => self.exec_s,
            Phase::Drain => self.drain_s,
            Phase::Conf => self.conf_s,
            Phase::Regv => self.regv_s,
            Phase::Range => self.range_s,
        }
    }

    fn get_mut(&mut self, p: Phase) -> &mut f64 {
        match p {
            Phase::Host => &mut self.host_s,
            Phase::Load => &mut self.load_s,
            Phase::Exec => &mut self.exec_s,
            Phase::Drain => &mut self.drain_s,
            Phase::Conf => &mut self.conf_s,
            Phase::Regv => &mut self.regv_s,
            Phase::Range => &mut self.range_s,
        }
    }

    pub fn total(&self) -> f64 {
        Phase::ALL.iter().map(|p| self.get(*p)).sum()
    }

    /// CONF + REGV + RANGE.
    pub fn other(&self) -> f64 {
        self.conf_s + self.regv_s + self.range_s
    }

    /// Time the host is busy: HOST plus PIO writes.
    pub fn host_busy(&self) -> f64 {
        self.host_s + self.other()
    }

    pub fn share(&self, p: Phase) -> f64 {
        let t = self.total();
        if t == 0.0 {
            0.0
        } else {
            self.get(p) / t
        }
    }

    fn add(&mut self, o: &Phases) {
        for p in Phase::ALL {
            *self.get_mut(p) += o.get(p);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub prefill: Phases,
    pub decode: Phases,
    /// Exposed LOAD + EXEC + DRAIN time per offloaded kernel type.
    pub accel_by_kernel: BTreeMap<QuantFormat, f64>,
    pub total_s: f64,
}

impl PhaseBreakdown {
    pub fn stage(&self, s: Stage) -> &Phases {
        match s {
            Stage::Prefill => &self.prefill,
            Stage::Decode => &self.decode,
        }
    }

    pub fn combined(&self) -> Phases {
        let mut c = self.prefill;
        c.add(&self.decode);
        c
    }
}

/// Cost of one offloaded call on `cfg.lanes_used` lanes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CallCost {
    pub overlap: Overlap,
    pub steps: u64,
    pub conf_s: f64,
    pub regv_s: f64,
    pub range_s: f64,
    pub host_s: f64,
}

fn split(total: u64, parts: u64) -> Vec<u64> {
    let (q, r) = (total / parts, total % parts);
    (0..parts).map(|i| q + u64::from(i < r)).collect()
}

/// Weights and all token activations stream in as one transfer, spread over
/// row tiles that double-buffer against execution; results drain once at the
/// end. Lanes split the rows evenly.
pub fn call_cost(call: &KernelCall, cfg: &MachineConfig) -> Result<CallCost> {
    let k = describe_kernel(call.format)?;
    let lanes = cfg.lanes_used as f64;
    let coalesce = cfg.dma.coalesce;
    let arrays = k.array_bytes(call.weight_rows, call.act_vectors * call.tokens, call.cols);
    let load = dma_time(
        &TransferPlan::from_lengths(&arrays, coalesce, Direction::Load),
        cfg,
    )?;
    let out = split(call.dots() * 4, k.tile_rows as u64);
    let drain = dma_time(
        &TransferPlan::from_lengths(&out, coalesce, Direction::Drain),
        cfg,
    )?;
    let exec = call.dots() as f64 * cycles_for(&k, call.cols, &cfg.cycle) as f64 / cfg.clock_hz;
    let steps = call
        .weight_rows
        .div_ceil((k.tile_rows * k.replication) as u64)
        .max(1);
    let n = steps as f64;
    let step = Step {
        load_s: load / n / lanes,
        exec_s: exec / n / lanes,
        drain_s: 0.0,
    };
    let extra = cfg.host.contention_penalty * (lanes - 1.0);
    Ok(CallCost {
        overlap: overlap_uniform(steps, step, drain / lanes),
        steps,
        conf_s: pio_time(PioKind::Conf, &k, cfg),
        regv_s: pio_time(PioKind::Regv, &k, cfg),
        range_s: pio_time(PioKind::Range, &k, cfg),
        host_s: cfg.host.serial_s_per_offload * (1.0 + extra),
    })
}

pub fn simulate_trace(
    trace: &WorkloadTrace,
    plan: &OffloadPlan,
    cfg: &MachineConfig,
) -> Result<PhaseBreakdown> {
    cfg.validate()?;
    let mut bd = PhaseBreakdown::default();
    for (i, c) in trace.calls.iter().enumerate() {
        let ph = match c.stage {
            Stage::Prefill => &mut bd.prefill,
            Stage::Decode => &mut bd.decode,
        };
        if plan.offloads(i, c) {
            let cc = call_cost(c, cfg)?;
            ph.load_s += cc.overlap.load_s;
            ph.exec_s += cc.overlap.exec_s;
            ph.drain_s += cc.overlap.drain_s;
            ph.conf_s += cc.conf_s;
            ph.regv_s += cc.regv_s;
            ph.range_s += cc.range_s;
            ph.host_s += cc.host_s;
            *bd.accel_by_kernel.entry(c.format).or_default() += cc.overlap.total_s;
        } else {
            let rate = cfg.host.mac_s.get(&c.format).ok_or_else(|| {
                Error::config(
                    format!("host.mac_s.{}", c.format),
                    "no host rate for retained calls",
                )
            })?;
            ph.host_s += c.macs() as f64 * rate;
        }
    }
    for t in &trace.host {
        let coef = cfg
            .host
            .task_s_per_elem
            .get(&t.kind)
            .copied()
            .unwrap_or(0.0);
        let ph = match t.stage {
            Stage::Prefill => &mut bd.prefill,
            Stage::Decode => &mut bd.decode,
        };
        ph.host_s += coef * t.elems as f64;
    }
    bd.total_s = bd.prefill.total() + bd.decode.total();
    Ok(bd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub latency_s: f64,
    pub avg_power_w: f64,
    pub pdp_j: f64,
    pub edp_js: f64,
}

impl EnergyReport {
    pub fn new(latency_s: f64, avg_power_w: f64) -> Self {
        let pdp_j = latency_s * avg_power_w;
        Self {
            latency_s,
            avg_power_w,
            pdp_j,
            edp_js: pdp_j * latency_s,
        }
    }
}

/// Accelerator phases draw `power_of` their kernel; HOST and PIO time draws
/// the active host.
pub fn energy_metrics(bd: &PhaseBreakdown, cfg: &MachineConfig) -> EnergyReport {
    if bd.total_s <= 0.0 {
        return EnergyReport::new(0.0, 0.0);
    }
    let accel: f64 = bd
        .accel_by_kernel
        .iter()
        .map(|(k, t)| t * power_of(*k, cfg))
        .sum();
    let host = bd.combined().host_busy() * cfg.power.host_active_watts;
    EnergyReport::new(bd.total_s, (accel + host) / bd.total_s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub lmm_bytes: u64,
    pub plan: OffloadPlan,
    pub ratio: OffloadRatioReport,
    pub breakdown: PhaseBreakdown,
    pub energy: EnergyReport,
}

pub fn evaluate(trace: &WorkloadTrace, cfg: &MachineConfig, policy: Policy) -> Result<SweepPoint> {
    let plan = plan_offload(trace, cfg, policy)?;
    let breakdown = simulate_trace(trace, &plan, cfg)?;
    Ok(SweepPoint {
        lmm_bytes: cfg.lmm_bytes,
        ratio: offload_ratio(&plan, trace),
        energy: energy_metrics(&breakdown, cfg),
        plan,
        breakdown,
    })
}

pub fn lmm_sweep(
    trace: &WorkloadTrace,
    sizes: &[u64],
    cfg: &MachineConfig,
    policy: Policy,
) -> Result<Vec<SweepPoint>> {
    sizes
        .iter()
        .map(|&s| evaluate(trace, &cfg.with_lmm(s), policy))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LanePoint {
    pub lanes: u32,
    pub latency_s: f64,
    /// Throughput relative to one lane.
    pub perf: f64,
}

pub fn lane_scaling_curve(
    trace: &WorkloadTrace,
    plan: &OffloadPlan,
    cfg: &MachineConfig,
    lanes: &[u32],
) -> Result<Vec<LanePoint>> {
    let base = simulate_trace(trace, plan, &cfg.with_lanes(1))?.total_s;
    lanes
        .iter()
        .map(|&l| {
            if l == 0 || l > cfg.lanes_total {
                return Err(Error::config(
                    "lanes",
                    format!("{l} outside 1..={}", cfg.lanes_total),
                ));
            }
            let t = simulate_trace(trace, plan, &cfg.with_lanes(l))?.total_s;
            Ok(LanePoint {
                lanes: l,
                latency_s: t,
                perf: if t > 0.0 { base / t } else { 1.0 },
            })
        })
        .collect()
}
