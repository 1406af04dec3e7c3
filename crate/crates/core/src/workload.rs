//! Model configurations and kernel-call traces for prefill and decode.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::quantfmt::QuantFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    FfnGate,
    FfnUp,
    FfnDown,
    LmHead,
    AttnScore,
    AttnValue,
}

impl Role {
    pub const PROJECTIONS: [Role; 7] = [
        Role::AttnQ,
        Role::AttnK,
        Role::AttnV,
        Role::AttnO,
        Role::FfnGate,
        Role::FfnUp,
        Role::FfnDown,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Role::AttnQ => "attn_q",
            Role::AttnK => "attn_k",
            Role::AttnV => "attn_v",
            Role::AttnO => "attn_o",
            Role::FfnGate => "ffn_gate",
            Role::FfnUp => "ffn_up",
            Role::FfnDown => "ffn_down",
            Role::LmHead => "lm_head",
            Role::AttnScore => "attn_score",
            Role::AttnValue => "attn_value",
        }
    }

    /// Attention mat-muls run against the FP16 KV cache.
    pub fn is_kv(self) -> bool {
        matches!(self, Role::AttnScore | Role::AttnValue)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prefill,
    Decode,
}

/// Tensor role → format. `linear` covers every projection without an
/// explicit entry; `norm` and `attn_cache` are the FP16 tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantMap {
    pub linear: QuantFormat,
    #[serde(default = "fp16")]
    pub norm: QuantFormat,
    #[serde(default = "fp16")]
    pub attn_cache: QuantFormat,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<Role, QuantFormat>,
}

fn fp16() -> QuantFormat {
    QuantFormat::F16
}

impl QuantMap {
    pub fn uniform(linear: QuantFormat) -> Self {
        Self {
            linear,
            norm: QuantFormat::F16,
            attn_cache: QuantFormat::F16,
            overrides: BTreeMap::new(),
        }
    }

    pub fn format_of(&self, role: Role) -> QuantFormat {
        if role.is_kv() {
            return self.attn_cache;
        }
        *self.overrides.get(&role).unwrap_or(&self.linear)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub source: String,
    pub layers: u64,
    pub hidden: u64,
    pub heads: u64,
    pub kv_heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub vocab: u64,
    /// KV length is rounded up to a multiple of this (llama.cpp pads the
    /// cache view). 1 disables padding.
    #[serde(default = "one")]
    pub kv_padding: u64,
    pub quant_map: QuantMap,
}

fn one() -> u64 {
    1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("kv_heads", self.kv_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab", self.vocab),
            ("kv_padding", self.kv_padding),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.heads.is_multiple_of(self.kv_heads) {
            return Err(Error::config("kv_heads", "must divide heads"));
        }
        if self.quant_map.attn_cache != QuantFormat::F16 || self.quant_map.norm != QuantFormat::F16
        {
            return Err(Error::config(
                "quant_map",
                "norm and attn_cache must be FP16",
            ));
        }
        for role in Role::PROJECTIONS.into_iter().chain([Role::LmHead]) {
            let f = self.quant_map.format_of(role);
            if f == QuantFormat::Q8K {
                return Err(Error::config(
                    format!("quant_map.{role}"),
                    "Q8_K is activation-only",
                ));
            }
        }
        Ok(())
    }

    /// Parses and validates; errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::config("$", e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| Error::config("$", "expected an object"))?;
        for field in [
            "name",
            "layers",
            "hidden",
            "heads",
            "kv_heads",
            "head_dim",
            "ffn_dim",
            "vocab",
            "quant_map",
        ] {
            if !obj.contains_key(field) {
                return Err(Error::config(field, "missing"));
            }
        }
        let cfg: ModelConfig = serde_json::from_value(v.clone()).map_err(|e| {
            let field = first_bad_field(obj).unwrap_or("$");
            Error::config(field, e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref();
        std::fs::write(p, self.to_json() + "\n").map_err(|e| Error::io(p.display().to_string(), e))
    }

    fn padded(&self, kv: u64) -> u64 {
        kv.div_ceil(self.kv_padding) * self.kv_padding
    }
}

fn first_bad_field(obj: &serde_json::Map<String, Value>) -> Option<&'static str> {
    [
        "layers",
        "hidden",
        "heads",
        "kv_heads",
        "head_dim",
        "ffn_dim",
        "vocab",
        "kv_padding",
    ]
    .into_iter()
    .find(|f| obj.get(*f).is_some_and(|v| !v.is_u64()))
    .or_else(|| obj.get("quant_map").map(|_| "quant_map"))
}

/// One mat-vec (or batch of mat-vecs over `tokens`) in the trace.
///
/// `rows` counts dot products per token. For KV mat-muls several query
/// heads share one KV head, so the distinct stored rows (`weight_rows`) are
/// fewer and each token brings `act_vectors` activation vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCall {
    pub format: QuantFormat,
    pub role: Role,
    pub stage: Stage,
    pub step: u32,
    pub layer: u32,
    pub rows: u64,
    pub cols: u64,
    pub tokens: u64,
    pub weight_rows: u64,
    pub act_vectors: u64,
}

impl KernelCall {
    pub fn dots(&self) -> u64 {
        self.rows * self.tokens
    }

    pub fn macs(&self) -> u64 {
        self.rows * self.cols * self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HostTaskKind {
    Tokenize,
    Embed,
    Rmsnorm,
    Rope,
    Softmax,
    KvManage,
}

/// Work the host keeps; `elems` is the element count the task touches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostTask {
    pub kind: HostTaskKind,
    pub stage: Stage,
    pub step: u32,
    pub elems: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub model: String,
    pub n_in: u64,
    pub n_out: u64,
    pub calls: Vec<KernelCall>,
    pub host: Vec<HostTask>,
}

impl WorkloadTrace {
    pub fn is_empty(&self) -> bool {
        self.calls.is_empty() && self.host.is_empty()
    }

    pub fn total_macs(&self) -> u64 {
        self.calls.iter().map(KernelCall::macs).sum()
    }

    /// One JSON object per line: calls then host tasks, in trace order.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for c in &self.calls {
            s.push_str(&serde_json::to_string(c).expect("call serializes"));
            s.push('\n');
        }
        for h in &self.host {
            s.push_str(&serde_json::to_string(h).expect("task serializes"));
            s.push('\n');
        }
        s
    }
}

/// Prefill processes all `n_in` prompt tokens in one step. Decode step
/// `t = 1..=n_out` processes one token against `n_in + t` cached positions
/// and ends with the LM head.
pub fn build_trace(cfg: &ModelConfig, n_in: u64, n_out: u64) -> Result<WorkloadTrace> {
    if n_in == 0 {
        return Err(Error::Range("n_in must be at least 1".into()));
    }
    if n_in.checked_add(n_out).is_none_or(|t| t > u32::MAX as u64) {
        return Err(Error::Range("token counts too large".into()));
    }
    cfg.validate()?;
    let mut tr = WorkloadTrace {
        model: cfg.name.clone(),
        n_in,
        n_out,
        calls: Vec::new(),
        host: Vec::new(),
    };
    tr.host.push(HostTask {
        kind: HostTaskKind::Tokenize,
        stage: Stage::Prefill,
        step: 0,
        elems: n_in,
    });
    emit_step(cfg, &mut tr, Stage::Prefill, 0, n_in, n_in);
    for t in 1..=n_out {
        emit_step(cfg, &mut tr, Stage::Decode, t as u32, 1, n_in + t);
    }
    Ok(tr)
}

fn emit_step(
    cfg: &ModelConfig,
    tr: &mut WorkloadTrace,
    stage: Stage,
    step: u32,
    ntok: u64,
    ctx: u64,
) {
    let (h, hd, nh, nkv, ffn) = (
        cfg.hidden,
        cfg.head_dim,
        cfg.heads,
        cfg.kv_heads,
        cfg.ffn_dim,
    );
    let kv = cfg.padded(ctx);
    let q = &cfg.quant_map;
    let task = |kind, elems| HostTask {
        kind,
        stage,
        step,
        elems,
    };

    tr.host.push(task(HostTaskKind::Embed, ntok * h));
    for layer in 0..cfg.layers as u32 {
        let proj = |role: Role, rows: u64, cols: u64| KernelCall {
            format: q.format_of(role),
            role,
            stage,
            step,
            layer,
            rows,
            cols,
            tokens: ntok,
            weight_rows: rows,
            act_vectors: 1,
        };
        tr.host.push(task(HostTaskKind::Rmsnorm, ntok * h));
        tr.calls.push(proj(Role::AttnQ, nh * hd, h));
        tr.calls.push(proj(Role::AttnK, nkv * hd, h));
        tr.calls.push(proj(Role::AttnV, nkv * hd, h));
        // q/k norms, rope, cache append
        tr.host
            .push(task(HostTaskKind::Rmsnorm, ntok * (nh + nkv) * hd));
        tr.host
            .push(task(HostTaskKind::Rope, ntok * (nh + nkv) * hd));
        tr.host
            .push(task(HostTaskKind::KvManage, ntok * 2 * nkv * hd));
        tr.calls.push(KernelCall {
            format: q.attn_cache,
            role: Role::AttnScore,
            stage,
            step,
            layer,
            rows: nh * kv,
            cols: hd,
            tokens: ntok,
            weight_rows: nkv * kv,
            act_vectors: nh,
        });
        tr.host.push(task(HostTaskKind::Softmax, ntok * nh * kv));
        tr.calls.push(KernelCall {
            format: q.attn_cache,
            role: Role::AttnValue,
            stage,
            step,
            layer,
            rows: nh * hd,
            cols: kv,
            tokens: ntok,
            weight_rows: nkv * hd,
            act_vectors: nh,
        });
        tr.calls.push(proj(Role::AttnO, h, nh * hd));
        tr.host.push(task(HostTaskKind::Rmsnorm, ntok * h));
        tr.calls.push(proj(Role::FfnGate, ffn, h));
        tr.calls.push(proj(Role::FfnUp, ffn, h));
        tr.calls.push(proj(Role::FfnDown, h, ffn));
    }
    if stage == Stage::Decode {
        tr.host.push(task(HostTaskKind::Rmsnorm, h));
        tr.calls.push(KernelCall {
            format: q.format_of(Role::LmHead),
            role: Role::LmHead,
            stage,
            step,
            layer: cfg.layers as u32,
            rows: cfg.vocab,
            cols: h,
            tokens: 1,
            weight_rows: cfg.vocab,
            act_vectors: 1,
        });
        tr.host.push(task(HostTaskKind::Softmax, cfg.vocab));
    }
}
