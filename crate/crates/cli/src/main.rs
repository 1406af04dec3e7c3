mod args;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgla_core::calibrate::{calibrate, coalescing_factors, Targets};
use cgla_core::kernels::{exec_dot_with, CycleParams};
use cgla_core::machine::MachineConfig;
use cgla_core::perf::{evaluate, lane_scaling_curve, lmm_sweep, Phase, SweepPoint};
use cgla_core::planner::plan_offload;
use cgla_core::quantfmt::{quantize, read_fixture, ref_dot, write_fixture};
use cgla_core::report::{bar_chart_svg, Provenance, ReferenceData, Report, Table};
use cgla_core::workload::{build_trace, ModelConfig, WorkloadTrace};
use cgla_core::{profiles, verify};
use clap::Parser;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use args::*;

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<cgla_core::Error> for Failure {
    fn from(e: cgla_core::Error) -> Self {
        Self::usage(e)
    }
}

type Run<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("cgla-sim: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> Run<()> {
    match cmd {
        Command::Verify(a) => cmd_verify(a),
        Command::Quantize(a) => cmd_quantize(a),
        Command::Dot(a) => cmd_dot(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Scale(a) => cmd_scale(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

// ---- inputs ----

fn read(path: &Path) -> Run<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Run<()> {
    std::fs::write(path, text)
        .map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

/// A file path, then `$CGLA_SIM_PROFILE_DIR`, then the built-in table.
fn resolve(
    name: &str,
    kind: &str,
    dir_name: &str,
    builtin: &[(&str, &'static str)],
) -> Run<(String, String)> {
    let direct = Path::new(name);
    if direct.is_file() {
        return Ok((name.to_string(), read(direct)?));
    }
    if let Some(dir) = std::env::var_os("CGLA_SIM_PROFILE_DIR") {
        let dir = PathBuf::from(dir);
        for base in [dir.clone(), dir.join(dir_name)] {
            for cand in [base.join(name), base.join(format!("{name}.json"))] {
                if cand.is_file() {
                    return Ok((cand.display().to_string(), read(&cand)?));
                }
            }
        }
    }
    let stem = name.strip_suffix(".json").unwrap_or(name);
    builtin
        .iter()
        .find(|(n, _)| *n == stem)
        .map(|(n, t)| (format!("builtin:{n}"), t.to_string()))
        .ok_or_else(|| Failure::usage(format!("no such file or {kind} profile: {name}")))
}

/// Sets a dotted field in the profile JSON. Values parse as JSON, falling
/// back to a plain string.
fn apply_override(doc: &mut Value, spec: &str) -> Run<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::usage(format!("--set expects PATH=VALUE, got `{spec}`")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            Failure::usage(format!(
                "--set {path}: `{}` is not an object",
                keys[..i].join(".")
            ))
        })?;
        if i + 1 == keys.len() {
            obj.insert(k.to_string(), value);
            return Ok(());
        }
        node = obj
            .get_mut(*k)
            .ok_or_else(|| Failure::usage(format!("--set {path}: no field `{k}`")))?;
    }
    Ok(())
}

struct Inputs {
    model: ModelConfig,
    machine: MachineConfig,
    trace: WorkloadTrace,
    provenance: Provenance,
}

fn load_inputs(a: &RunArgs) -> Run<Inputs> {
    let mut provenance = Provenance::new();
    let (mlabel, mtext) = resolve(&a.model, "model", "models", &profiles::MODELS)?;
    provenance.add(format!("model {mlabel}"), mtext.as_bytes());
    let model = ModelConfig::from_json(&mtext)?;

    let (clabel, ctext) = resolve(&a.machine, "machine", "machines", &profiles::MACHINES)?;
    provenance.add(format!("machine {clabel}"), ctext.as_bytes());
    let mut doc: Value =
        serde_json::from_str(&ctext).map_err(|e| Failure::usage(format!("{clabel}: {e}")))?;
    for s in &a.overrides {
        apply_override(&mut doc, s)?;
        provenance.add(format!("set {s}"), s.as_bytes());
    }
    let mut machine = MachineConfig::from_json(&doc.to_string())?;
    if let Some(l) = a.lanes {
        machine = machine.with_lanes(l);
    }
    if let Some(b) = a.lmm {
        machine = machine.with_lmm(b);
    }
    machine.validate()?;

    let trace = build_trace(&model, a.tokens.0, a.tokens.1)?;
    if let Some(p) = &a.trace_out {
        write(p, &trace.to_jsonl())?;
    }
    Ok(Inputs {
        model,
        machine,
        trace,
        provenance,
    })
}

// ---- output ----

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn emit(out: &Output, report: Report, tables: &[(&str, Table)]) -> Run<()> {
    let text = match out.format {
        OutFormat::Json => report.to_json(),
        OutFormat::Csv | OutFormat::Table => {
            let p = &report.provenance;
            let mut s = format!(
                "# {} {} {} schema {}\n",
                p.tool, p.version, report.command, report.schema
            );
            for (k, v) in &p.inputs {
                s += &format!("# sha256 {v} {k}\n");
            }
            for (title, t) in tables {
                s += &format!("\n# {title}\n");
                s += &if out.format == OutFormat::Csv {
                    t.to_csv(None)
                } else {
                    t.to_text()
                };
            }
            s
        }
    };
    match &out.out {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn svg(path: &Option<PathBuf>, title: &str, bars: Vec<(String, f64)>, unit: &str) -> Run<()> {
    match path {
        Some(p) => write(p, &bar_chart_svg(title, &bars, unit)),
        None => Ok(()),
    }
}

fn types_label(p: &SweepPoint) -> String {
    let t: Vec<_> = p.plan.offloaded_types().iter().map(|f| f.name()).collect();
    if t.is_empty() {
        "-".into()
    } else {
        t.join("+")
    }
}

fn breakdown_table(p: &SweepPoint) -> Table {
    let bd = &p.breakdown;
    let all = bd.combined();
    let mut t = Table::new(["phase", "prefill_s", "decode_s", "total_s", "share_pct"]);
    for ph in Phase::ALL {
        t.push([
            ph.name().into(),
            num(bd.prefill.get(ph)),
            num(bd.decode.get(ph)),
            num(all.get(ph)),
            pct(all.share(ph)),
        ]);
    }
    t.push([
        "TOTAL".into(),
        num(bd.prefill.total()),
        num(bd.decode.total()),
        num(bd.total_s),
        pct(1.0),
    ]);
    t
}

fn offload_table(p: &SweepPoint) -> Table {
    let mut t = Table::new(["type", "offloaded", "ratio_pct"]);
    for (f, r) in &p.ratio.per_type {
        t.push([f.name().into(), p.plan.type_on(*f).to_string(), pct(*r)]);
    }
    t.push(["total".into(), String::new(), pct(p.ratio.total)]);
    t
}

fn energy_table(p: &SweepPoint) -> Table {
    let e = &p.energy;
    let mut t = Table::new(["metric", "value"]);
    t.push(["latency_s".into(), num(e.latency_s)]);
    t.push(["avg_power_w".into(), num(e.avg_power_w)]);
    t.push(["pdp_j".into(), num(e.pdp_j)]);
    t.push(["edp_js".into(), num(e.edp_js)]);
    t
}

fn run_header(i: &Inputs, a: &RunArgs) -> Value {
    json!({
        "model": i.model.name,
        "machine": i.machine.name,
        "tokens": { "in": a.tokens.0, "out": a.tokens.1 },
        "lanes": i.machine.lanes_used,
        "lmm_bytes": i.machine.lmm_bytes,
        "policy": a.policy,
    })
}

// ---- commands ----

fn cmd_verify(a: VerifyArgs) -> Run<()> {
    let v = verify::run(a.seed, a.cases)?;
    let mut t = Table::new(["suite", "cases", "failures"]);
    for (name, s) in &v.suites {
        t.push([name.clone(), s.cases.to_string(), s.failures.to_string()]);
    }
    let mut prov = Provenance::new();
    prov.add("isa golden", verify::GOLDEN.as_bytes());
    let body = serde_json::to_value(&v).expect("summary serializes");
    emit(
        &a.output,
        Report::new("verify", prov, body),
        &[("verification", t)],
    )?;
    if v.passed() {
        Ok(())
    } else {
        let failed: Vec<_> = v
            .suites
            .iter()
            .filter(|s| s.1.failures > 0)
            .map(|s| s.0.as_str())
            .collect();
        Err(Failure {
            code: 1,
            message: format!("verification failed: {}", failed.join(", ")),
        })
    }
}

fn cmd_quantize(a: QuantizeArgs) -> Run<()> {
    let values: Vec<f32> = match (&a.input, a.random) {
        (_, Some(n)) => {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
            (0..n).map(|_| r.gen_range(-1.0f32..1.0)).collect()
        }
        (Some(p), None) => {
            let text = if p.as_os_str() == "-" {
                std::io::read_to_string(std::io::stdin())
                    .map_err(|e| Failure::usage(format!("stdin: {e}")))?
            } else {
                read(p)?
            };
            text.split_whitespace()
                .map(|w| {
                    w.parse()
                        .map_err(|_| Failure::usage(format!("`{w}` is not a number")))
                })
                .collect::<Run<_>>()?
        }
        (None, None) => unreachable!("clap requires one"),
    };
    let fixture = write_fixture(&quantize(a.quant, &values)?);
    match &a.out {
        Some(p) => write(p, &fixture),
        None => {
            print!("{fixture}");
            Ok(())
        }
    }
}

fn cmd_dot(a: DotArgs) -> Run<()> {
    let mut prov = Provenance::new();
    let wt = read(&a.weights)?;
    let at = read(&a.acts)?;
    prov.add(format!("weights {}", a.weights.display()), wt.as_bytes());
    prov.add(format!("acts {}", a.acts.display()), at.as_bytes());
    let w = read_fixture(&wt)?;
    let x = read_fixture(&at)?;
    let f = w.format();
    let got = exec_dot_with(f, &w, &x, &CycleParams::default(), a.interleave.max(1))?;
    let want = ref_dot(f, &w, &x)?;
    let mut t = Table::new(["metric", "value"]);
    t.push(["format".to_string(), f.name().to_string()]);
    t.push(["elements".into(), w.len().to_string()]);
    t.push(["exec".into(), format!("{:e}", got.value)]);
    t.push(["reference".into(), format!("{:e}", want.value)]);
    t.push(["difference".into(), format!("{:e}", want.value - got.value)]);
    t.push(["cycles".into(), got.cycles.to_string()]);
    t.push(["pe_used".into(), got.pe_used.to_string()]);
    let body = json!({
        "format": f,
        "elements": w.len(),
        "exec": got,
        "reference": { "value": want.value, "integer_partials": want.partials },
    });
    emit(&a.output, Report::new("dot", prov, body), &[("dot", t)])
}

fn cmd_simulate(a: RunArgs) -> Run<()> {
    let i = load_inputs(&a)?;
    let p = evaluate(&i.trace, &i.machine, a.policy)?;
    if let Some(path) = &a.plan_out {
        p.plan.save(path)?;
    }
    let all = p.breakdown.combined();
    let bars = Phase::ALL
        .iter()
        .map(|ph| (ph.name().to_string(), all.get(*ph)))
        .collect();
    svg(
        &a.svg,
        &format!("{} on {}", i.model.name, i.machine.name),
        bars,
        "s",
    )?;
    let mut body = run_header(&i, &a);
    body["result"] = serde_json::to_value(&p).expect("point serializes");
    emit(
        &a.output,
        Report::new("simulate", i.provenance, body),
        &[
            ("breakdown", breakdown_table(&p)),
            ("offload", offload_table(&p)),
            ("energy", energy_table(&p)),
        ],
    )
}

fn cmd_sweep(a: SweepArgs) -> Run<()> {
    let i = load_inputs(&a.run)?;
    let pts = lmm_sweep(&i.trace, &a.sizes, &i.machine, a.run.policy)?;
    let mut t = Table::new([
        "lmm",
        "types",
        "ratio_pct",
        "latency_s",
        "power_w",
        "pdp_j",
        "edp_js",
    ]);
    for p in &pts {
        t.push([
            format!("{}K", p.lmm_bytes / 1024),
            types_label(p),
            pct(p.ratio.total),
            num(p.energy.latency_s),
            num(p.energy.avg_power_w),
            num(p.energy.pdp_j),
            num(p.energy.edp_js),
        ]);
    }
    let bars = pts
        .iter()
        .map(|p| (format!("{}K", p.lmm_bytes / 1024), p.energy.pdp_j))
        .collect();
    svg(
        &a.run.svg,
        &format!("PDP of {} by LMM size", i.model.name),
        bars,
        "J",
    )?;
    let mut body = run_header(&i, &a.run);
    body["points"] = serde_json::to_value(&pts).expect("points serialize");
    emit(
        &a.run.output,
        Report::new("sweep", i.provenance, body),
        &[("sweep", t)],
    )
}

fn cmd_scale(a: ScaleArgs) -> Run<()> {
    let i = load_inputs(&a.run)?;
    let lanes: Vec<u32> = if a.lane_list.is_empty() {
        (1..=i.machine.lanes_total).collect()
    } else {
        a.lane_list.clone()
    };
    let plan = plan_offload(&i.trace, &i.machine, a.run.policy)?;
    let curve = lane_scaling_curve(&i.trace, &plan, &i.machine, &lanes)?;
    let mut t = Table::new(["lanes", "latency_s", "perf"]);
    for c in &curve {
        t.push([
            c.lanes.to_string(),
            num(c.latency_s),
            format!("{:.4}", c.perf),
        ]);
    }
    let bars = curve
        .iter()
        .map(|c| (format!("{} lanes", c.lanes), c.perf))
        .collect();
    svg(
        &a.run.svg,
        &format!("{} lane scaling", i.model.name),
        bars,
        "x",
    )?;
    let mut body = run_header(&i, &a.run);
    body["plan"] = serde_json::to_value(&plan).expect("plan serializes");
    body["curve"] = serde_json::to_value(&curve).expect("curve serializes");
    emit(
        &a.run.output,
        Report::new("scale", i.provenance, body),
        &[("lane scaling", t)],
    )
}

fn cmd_compare(a: RunArgs) -> Run<()> {
    let mut i = load_inputs(&a)?;
    let p = evaluate(&i.trace, &i.machine, a.policy)?;
    let refs = ReferenceData::bundled();
    i.provenance
        .add("reference devices", profiles::REFERENCE_DEVICES.as_bytes());
    let tokens = format!("{}:{}", a.tokens.0, a.tokens.1);
    let mut t = Table::new([
        "device",
        "source",
        "latency_s",
        "power_w",
        "pdp_j",
        "edp_js",
    ]);
    let opt = |x: Option<f64>| x.map_or_else(|| "-".into(), num);
    let e = &p.energy;
    t.push([
        format!("{} (simulated)", i.machine.name),
        "model".into(),
        num(e.latency_s),
        num(e.avg_power_w),
        num(e.pdp_j),
        num(e.edp_js),
    ]);
    let mut bars = vec![(i.machine.name.clone(), e.pdp_j)];
    let mut rows = Vec::new();
    for (d, pt, m) in refs.lookup(&i.model.name, &tokens) {
        t.push([
            d.name.clone(),
            "reference".into(),
            opt(m.map(|m| m.latency_s)),
            opt(m.map(|m| m.avg_power_w)),
            opt(m.map(|m| m.pdp_j)),
            opt(m.map(|m| m.edp_js)),
        ]);
        if let Some(m) = m {
            bars.push((d.name.clone(), m.pdp_j));
        }
        rows.push(json!({ "device": d.name, "reported": pt, "metrics": m }));
    }
    svg(
        &a.svg,
        &format!("PDP for {} [{tokens}]", i.model.name),
        bars,
        "J",
    )?;
    let mut body = run_header(&i, &a);
    body["simulated"] = serde_json::to_value(&p).expect("point serializes");
    body["references"] = Value::Array(rows);
    emit(
        &a.output,
        Report::new("compare", i.provenance, body),
        &[("comparison", t)],
    )
}

fn cmd_calibrate(a: CalibrateArgs) -> Run<()> {
    let mut prov = Provenance::new();
    let (mlabel, mtext) = resolve(&a.model, "model", "models", &profiles::MODELS)?;
    let (clabel, ctext) = resolve(&a.machine, "machine", "machines", &profiles::MACHINES)?;
    prov.add(format!("model {mlabel}"), mtext.as_bytes());
    prov.add(format!("machine {clabel}"), ctext.as_bytes());
    let model = ModelConfig::from_json(&mtext)?;
    let seed = MachineConfig::from_json(&ctext)?;
    let want = Targets {
        host_s: a.target[0],
        load_s: a.target[1],
        exec_s: a.target[2],
        drain_s: a.target[3],
        other_s: a.target[4],
    };
    let trace = build_trace(&model, a.tokens.0, a.tokens.1)?;
    let plan = plan_offload(&trace, &seed, cgla_core::planner::Policy::Capacity)?;
    let (mut cfg, rep) = calibrate(&seed, &trace, &plan, &want)?;
    if let Some(n) = &a.note {
        cfg.note = n.clone();
    }

    let mut variants = Vec::new();
    for v in &a.variant {
        let mut parts = v.splitn(3, ':');
        let (Some(name), Some(hz), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Failure::usage(format!(
                "--variant expects NAME:HZ:PATH, got `{v}`"
            )));
        };
        let hz: f64 = hz
            .parse()
            .map_err(|_| Failure::usage(format!("bad clock `{hz}`")))?;
        let mut c = MachineConfig {
            name: name.into(),
            clock_hz: hz,
            ..cfg.clone()
        };
        c.note = format!("{} fit with the clock set to {} MHz", seed.name, hz / 1e6);
        c.validate()?;
        variants.push((PathBuf::from(path), c));
    }
    if let Some(p) = &a.profile_out {
        write(p, &(cfg.to_json() + "\n"))?;
    }
    for (p, c) in &variants {
        write(p, &(c.to_json() + "\n"))?;
    }

    let mix = cfg
        .reference_mix
        .clone()
        .unwrap_or_else(|| cgla_core::calibrate::reference_mix(&cfg));
    let (lf, df) = coalescing_factors(&mix, &cfg)?;
    let mut t = Table::new(["phase", "target_s", "achieved_s"]);
    let pairs = [
        ("HOST", want.host_s, rep.achieved.host_s),
        ("LOAD", want.load_s, rep.achieved.load_s),
        ("EXEC", want.exec_s, rep.achieved.exec_s),
        ("DRAIN", want.drain_s, rep.achieved.drain_s),
        ("OTHER", want.other_s, rep.achieved.other_s),
    ];
    for (n, w, g) in pairs {
        t.push([n.into(), num(w), num(g)]);
    }
    let mut s = Table::new(["metric", "value"]);
    s.push(["iterations".into(), rep.iterations.to_string()]);
    s.push(["max_rel_err".into(), format!("{:.3e}", rep.max_rel_err)]);
    s.push(["load_coalescing".into(), format!("{lf:.4}")]);
    s.push(["drain_coalescing".into(), format!("{df:.4}")]);
    let body = json!({ "report": rep, "profile": cfg });
    emit(
        &a.output,
        Report::new("calibrate", prov, body),
        &[("fit", t), ("summary", s)],
    )
}
