//! Profiles compiled into the library.

use crate::error::{Error, Result};
use crate::machine::MachineConfig;
use crate::workload::ModelConfig;

pub const MODELS: [(&str, &str); 6] = [
    (
        "qwen3-0.6b-q3ks",
        include_str!("../profiles/models/qwen3-0.6b-q3ks.json"),
    ),
    (
        "qwen3-0.6b-q8_0",
        include_str!("../profiles/models/qwen3-0.6b-q8_0.json"),
    ),
    (
        "qwen3-1.7b-q3ks",
        include_str!("../profiles/models/qwen3-1.7b-q3ks.json"),
    ),
    (
        "qwen3-1.7b-q8_0",
        include_str!("../profiles/models/qwen3-1.7b-q8_0.json"),
    ),
    (
        "qwen3-8b-q3ks",
        include_str!("../profiles/models/qwen3-8b-q3ks.json"),
    ),
    (
        "qwen3-8b-q8_0",
        include_str!("../profiles/models/qwen3-8b-q8_0.json"),
    ),
];

pub const MACHINES: [(&str, &str); 2] = [
    (
        "imax3-fpga",
        include_str!("../profiles/machines/imax3-fpga.json"),
    ),
    (
        "imax3-28nm",
        include_str!("../profiles/machines/imax3-28nm.json"),
    ),
];

pub const REFERENCE_DEVICES: &str = include_str!("../profiles/reference-devices.json");

fn lookup<'a>(table: &[(&str, &'a str)], name: &str) -> Option<&'a str> {
    let stem = name.strip_suffix(".json").unwrap_or(name);
    table.iter().find(|(n, _)| *n == stem).map(|(_, t)| *t)
}

pub fn model(name: &str) -> Result<ModelConfig> {
    let text = lookup(&MODELS, name)
        .ok_or_else(|| Error::config("model", format!("no built-in model {name:?}")))?;
    ModelConfig::from_json(text)
}

pub fn machine(name: &str) -> Result<MachineConfig> {
    let text = lookup(&MACHINES, name)
        .ok_or_else(|| Error::config("machine", format!("no built-in machine {name:?}")))?;
    MachineConfig::from_json(text)
}

/// Raw text of a built-in profile, for hashing.
pub fn text(name: &str) -> Option<&'static str> {
    lookup(&MODELS, name).or_else(|| lookup(&MACHINES, name))
}
