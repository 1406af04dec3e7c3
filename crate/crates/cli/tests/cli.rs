use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    sim_env(args, None)
}

fn sim_env(args: &[&str], profile_dir: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cgla-sim"));
    c.args(args).env_remove("CGLA_SIM_PROFILE_DIR");
    if let Some(d) = profile_dir {
        c.env("CGLA_SIM_PROFILE_DIR", d);
    }
    c.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn verify_passes_with_counts() {
    let o = sim(&["verify", "--cases", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    for suite in ["FP16", "Q3_K", "Q6_K", "Q8_0", "ISA"] {
        assert!(
            s.lines().any(|l| l.starts_with(suite)),
            "{suite} missing:\n{s}"
        );
    }
    assert!(s.contains("Q8_0     100         0"));
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["simulate", "--tokens", "32"][..],
        &["simulate", "--tokens", "0:4"],
        &["simulate", "--lmm", "1M"],
        &["simulate", "--lmm", "48K"],
        &["simulate", "--frobnicate"],
        &["simulate", "--policy", "fastest"],
        &["nonsense"],
    ] {
        let o = sim(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn missing_file_named() {
    let o = sim(&["simulate", "--model", "/no/such/model.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/model.json"));
    let o = sim(&["dot", "--weights", "/no/w.txt", "--acts", "/no/a.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/w.txt"));
}

#[test]
fn json_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for cmd in ["simulate", "sweep", "scale", "compare"] {
        let mut outs = Vec::new();
        for i in 0..2 {
            let p = dir.path().join(format!("{cmd}{i}.json"));
            let o = sim(&[
                cmd,
                "--model",
                "qwen3-0.6b-q8_0",
                "--tokens",
                "8:4",
                "--format",
                "json",
                "--out",
                p.to_str().unwrap(),
            ]);
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            outs.push(std::fs::read(&p).unwrap());
        }
        assert_eq!(outs[0], outs[1], "{cmd}");
        let v: serde_json::Value = serde_json::from_slice(&outs[0]).unwrap();
        assert_eq!(v["schema"], "v1");
        assert_eq!(v["command"], cmd);
        assert_eq!(v["provenance"]["tool"], "cgla-sim");
        assert!(v["provenance"]["inputs"].as_object().unwrap().len() >= 2);
    }
}

#[test]
fn csv_has_provenance_and_sections() {
    let o = sim(&["simulate", "--tokens", "4:2", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.starts_with("# cgla-sim "));
    assert!(s.contains("# sha256 "));
    assert!(s.contains("phase,prefill_s,decode_s,total_s,share_pct\n"));
    assert!(s.contains("\nTOTAL,"));
}

#[test]
fn simulate_reproduces_fpga_breakdown() {
    let o = sim(&[
        "simulate",
        "--model",
        "qwen3-0.6b-q3ks.json",
        "--machine",
        "imax3-fpga.json",
        "--tokens",
        "32:16",
        "--lanes",
        "2",
        "--lmm",
        "64K",
        "--policy",
        "capacity",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let bd = &v["body"]["result"]["breakdown"];
    let sum = |k: &str| bd["prefill"][k].as_f64().unwrap() + bd["decode"][k].as_f64().unwrap();
    let other = sum("conf_s") + sum("regv_s") + sum("range_s");
    for (got, want) in [
        (sum("host_s"), 5.43),
        (sum("load_s"), 5.31),
        (sum("exec_s"), 4.47),
        (sum("drain_s"), 0.31),
        (other, 0.78),
    ] {
        assert!((got - want).abs() / want < 0.01, "{got} vs {want}");
    }
}

#[test]
fn compare_lists_jetson() {
    let o = sim(&["compare", "--model", "qwen3-1.7b-q8_0", "--tokens", "32:16"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    let jetson = s
        .lines()
        .find(|l| l.starts_with("Jetson"))
        .expect("Jetson row");
    assert!(jetson.trim_end().ends_with("216.600000"), "{jetson}");
}

#[test]
fn svg_written() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("b.svg");
    let o = sim(&["sweep", "--tokens", "4:2", "--svg", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let svg = std::fs::read_to_string(&p).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<rect").count() == 5);
}

#[test]
fn quantize_then_dot() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("w.txt");
    let a = dir.path().join("a.txt");
    let q = |fmt: &str, seed: &str, out: &Path| {
        let o = sim(&[
            "quantize",
            "--quant",
            fmt,
            "--random",
            "512",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    };
    q("Q6_K", "1", &w);
    q("Q8_K", "2", &a);
    let o = sim(&[
        "dot",
        "--weights",
        w.to_str().unwrap(),
        "--acts",
        a.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let b = &v["body"];
    assert_eq!(b["exec"]["value"], b["reference"]["value"]);
    assert_eq!(b["exec"]["pe_used"], 64);
    assert_eq!(b["elements"], 512);

    let vals = dir.path().join("v.txt");
    std::fs::write(&vals, "1 2 3").unwrap();
    let o = sim(&[
        "quantize",
        "--quant",
        "Q8_0",
        "--input",
        vals.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn profile_dir_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("machines")).unwrap();
    let base = sim(&[
        "simulate",
        "--machine",
        "imax3-fpga",
        "--format",
        "json",
        "--tokens",
        "4:2",
        "--policy",
        "capacity",
    ]);
    let text = serde_json::from_str::<serde_json::Value>(&stdout(&base)).unwrap();
    let lat = text["body"]["result"]["energy"]["latency_s"]
        .as_f64()
        .unwrap();

    // a renamed copy at double clock, found through the search path
    let o = sim(&[
        "calibrate",
        "--format",
        "json",
        "--variant",
        &format!(
            "fast:290e6:{}",
            dir.path().join("machines/fast.json").display()
        ),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let fast = sim_env(
        &[
            "simulate",
            "--machine",
            "fast",
            "--format",
            "json",
            "--tokens",
            "4:2",
            "--policy",
            "capacity",
        ],
        Some(dir.path()),
    );
    assert_eq!(fast.status.code(), Some(0), "{}", stderr(&fast));
    let fv: serde_json::Value = serde_json::from_str(&stdout(&fast)).unwrap();
    assert_eq!(fv["body"]["machine"], "fast");
    assert!(
        fv["body"]["result"]["energy"]["latency_s"]
            .as_f64()
            .unwrap()
            < lat
    );

    let o = sim(&[
        "simulate",
        "--machine",
        "imax3-fpga",
        "--set",
        "clock_hz=290e6",
        "--format",
        "json",
        "--tokens",
        "4:2",
        "--policy",
        "capacity",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ov: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(
        ov["body"]["result"]["energy"]["latency_s"]
            .as_f64()
            .unwrap()
            < lat
    );
    let o = sim(&["simulate", "--set", "no.such=1"]);
    assert_eq!(o.status.code(), Some(2));
}
