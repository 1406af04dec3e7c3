use std::path::PathBuf;

use cgla_core::machine::{check_lmm, KIB};
use cgla_core::planner::Policy;
use cgla_core::quantfmt::QuantFormat;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "cgla-sim",
    version,
    about = "Quantized dot-product simulator and performance model for a CGLA"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every kernel path against the reference dot and replay the ISA vectors.
    Verify(VerifyArgs),
    /// Quantize values into a block fixture.
    Quantize(QuantizeArgs),
    /// Run one dot product through the kernel and the reference.
    Dot(DotArgs),
    /// Phase breakdown and energy for one model, machine and token split.
    Simulate(RunArgs),
    /// Breakdown and PDP across LMM sizes.
    Sweep(SweepArgs),
    /// Relative throughput across lane counts.
    Scale(ScaleArgs),
    /// Simulated PDP/EDP next to the bundled reference devices.
    Compare(RunArgs),
    /// Fit a machine profile to a measured breakdown.
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Json,
    Csv,
    Table,
}

#[derive(Debug, Args)]
pub struct Output {
    #[arg(long, value_enum, default_value = "table")]
    pub format: OutFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Model profile: a path, a name under CGLA_SIM_PROFILE_DIR, or a built-in name.
    #[arg(long, default_value = "qwen3-0.6b-q3ks")]
    pub model: String,
    /// Machine profile, resolved like --model.
    #[arg(long, default_value = "imax3-28nm")]
    pub machine: String,
    /// Prompt and generated token counts.
    #[arg(long, default_value = "32:16", value_parser = parse_tokens)]
    pub tokens: (u64, u64),
    #[arg(long)]
    pub lanes: Option<u32>,
    /// LMM size per PE, e.g. 64K.
    #[arg(long, value_parser = parse_lmm)]
    pub lmm: Option<u64>,
    #[arg(long, default_value = "pdp", value_parser = parse_policy)]
    pub policy: Policy,
    /// Override a machine field, e.g. `--set dma.setup_s=2e-5`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Render a bar chart of the main table.
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Save the offload plan.
    #[arg(long)]
    pub plan_out: Option<PathBuf>,
    /// Dump the workload trace as JSON lines.
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated LMM sizes.
    #[arg(long, value_delimiter = ',', value_parser = parse_lmm,
          default_value = "32K,64K,128K,256K,512K")]
    pub sizes: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated lane counts; defaults to every count the machine has.
    #[arg(long, value_delimiter = ',')]
    pub lane_list: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Random cases per kernel format.
    #[arg(long, default_value_t = 1000)]
    pub cases: u64,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    #[arg(long, value_parser = parse_quant)]
    pub quant: QuantFormat,
    /// Whitespace-separated values; `-` reads stdin.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub input: Option<PathBuf>,
    /// Generate this many seeded uniform values in [-1, 1) instead.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DotArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub acts: PathBuf,
    /// FP16 accumulator slots.
    #[arg(long, default_value_t = 1)]
    pub interleave: usize,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Seed profile.
    #[arg(long, default_value = "imax3-fpga")]
    pub machine: String,
    #[arg(long, default_value = "qwen3-0.6b-q3ks")]
    pub model: String,
    #[arg(long, default_value = "32:16", value_parser = parse_tokens)]
    pub tokens: (u64, u64),
    /// Target seconds as HOST,LOAD,EXEC,DRAIN,OTHER.
    #[arg(long, value_delimiter = ',', num_args = 5, default_values_t = [5.43, 5.31, 4.47, 0.31, 0.78])]
    pub target: Vec<f64>,
    #[arg(long)]
    pub note: Option<String>,
    /// Where to write the fitted profile.
    #[arg(long)]
    pub profile_out: Option<PathBuf>,
    /// Also write a copy at another clock, as NAME:HZ:PATH.
    #[arg(long)]
    pub variant: Vec<String>,
    #[command(flatten)]
    pub output: Output,
}

pub fn parse_tokens(s: &str) -> Result<(u64, u64), String> {
    let (a, b) = s.split_once(':').ok_or("expected IN:OUT, e.g. 32:16")?;
    let pos = |x: &str| match x.trim().parse::<u64>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{x}` is not a positive integer")),
    };
    Ok((pos(a)?, pos(b)?))
}

pub fn parse_size(s: &str) -> Result<u64, String> {
    let t = s.trim();
    let (num, mul) = match t.char_indices().last() {
        Some((i, 'K' | 'k')) => (&t[..i], KIB),
        Some((i, 'M' | 'm')) => (&t[..i], KIB * KIB),
        _ => (t, 1),
    };
    let n: u64 = num
        .parse()
        .map_err(|_| format!("`{s}` is not a size like 64K"))?;
    n.checked_mul(mul).ok_or_else(|| format!("`{s}` overflows"))
}

pub fn parse_lmm(s: &str) -> Result<u64, String> {
    let n = parse_size(s)?;
    check_lmm(n).map_err(|e| e.to_string())?;
    Ok(n)
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse().map_err(|e: cgla_core::Error| e.to_string())
}

fn parse_quant(s: &str) -> Result<QuantFormat, String> {
    s.parse().map_err(|e: cgla_core::Error| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens() {
        assert_eq!(parse_tokens("32:16"), Ok((32, 16)));
        assert!(parse_tokens("32").is_err());
        assert!(parse_tokens("0:4").is_err());
        assert!(parse_tokens("4:-1").is_err());
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_lmm("64K"), Ok(65536));
        assert_eq!(parse_lmm("512k"), Ok(524288));
        assert!(parse_lmm("1M").is_err());
        assert!(parse_lmm("48K").is_err());
        assert!(parse_lmm("K").is_err());
    }

    #[test]
    fn example_spec_parses() {
        let cli = Cli::try_parse_from([
            "cgla-sim",
            "simulate",
            "--model",
            "qwen3-0.6b-q3ks.json",
            "--machine",
            "imax3-28nm.json",
            "--tokens",
            "32:16",
            "--lanes",
            "2",
            "--lmm",
            "64K",
        ])
        .unwrap();
        let Command::Simulate(a) = cli.command else {
            panic!()
        };
        assert_eq!((a.tokens, a.lanes, a.lmm), ((32, 16), Some(2), Some(65536)));
    }
}
