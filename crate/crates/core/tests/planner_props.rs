use cgla_core::kernels::describe_kernel;
use cgla_core::planner::*;
use cgla_core::profiles;
use cgla_core::quantfmt::QuantFormat;
use cgla_core::workload::{build_trace, KernelCall, Role, Stage, WorkloadTrace};

fn call(format: QuantFormat, rows: u64, cols: u64) -> KernelCall {
    KernelCall {
        format,
        role: Role::FfnUp,
        stage: Stage::Decode,
        step: 1,
        layer: 0,
        rows,
        cols,
        tokens: 1,
        weight_rows: rows,
        act_vectors: 1,
    }
}

#[test]
fn footprint_shape() {
    let k = describe_kernel(QuantFormat::Q8_0).unwrap();
    assert_eq!(footprint(&call(QuantFormat::Q8_0, 8, 0), &k), 0);
    // 8 staged weight rows and one activation row of 128·34 bytes, both
    // double-buffered, plus eight 4-byte outputs
    let row = 128 * 34;
    assert_eq!(
        footprint(&call(QuantFormat::Q8_0, 8, 4096), &k),
        2 * (row + 8 * row) + 32
    );
    for f in QuantFormat::KERNELS {
        let k = describe_kernel(f).unwrap();
        let a = footprint(&call(f, 1, 1024), &k);
        let b = footprint(&call(f, 1, 2048), &k);
        let fixed = k.tile_rows as u64 * 4;
        assert_eq!(b - fixed, 2 * (a - fixed), "{f}");
    }
}

#[test]
fn pdp_within_capacity_and_fp16_always_on() {
    for mach in ["imax3-fpga", "imax3-28nm"] {
        let cfg = profiles::machine(mach).unwrap();
        for (name, _) in profiles::MODELS {
            let tr = build_trace(&profiles::model(name).unwrap(), 32, 16).unwrap();
            let cap = plan_offload(&tr, &cfg, Policy::Capacity).unwrap();
            let pdp = plan_offload(&tr, &cfg, Policy::Pdp).unwrap();
            for f in pdp.offloaded_types() {
                assert!(cap.type_on(f), "{mach} {name} {f}");
            }
            assert_eq!(pdp.host_calls, cap.host_calls);
            assert!(cap.type_on(QuantFormat::F16) && pdp.type_on(QuantFormat::F16));
            assert_eq!(offload_ratio(&pdp, &tr).per_type[&QuantFormat::F16], 1.0);
        }
    }
}

#[test]
fn table_selections() {
    let cfg = profiles::machine("imax3-28nm").unwrap();
    let plan = |m| {
        let tr = build_trace(&profiles::model(m).unwrap(), 32, 16).unwrap();
        plan_offload(&tr, &cfg, Policy::Pdp).unwrap()
    };
    let big = plan("qwen3-8b-q8_0");
    assert!(!big.type_on(QuantFormat::Q8_0) && big.type_on(QuantFormat::F16));
    let small = plan("qwen3-0.6b-q3ks");
    assert!(small.type_on(QuantFormat::Q6K) && !small.type_on(QuantFormat::Q3K));
}

fn mixed_trace() -> WorkloadTrace {
    WorkloadTrace {
        model: "mixed".into(),
        n_in: 1,
        n_out: 1,
        calls: vec![
            call(QuantFormat::F16, 7, 64),
            call(QuantFormat::Q8_0, 13, 64),
            call(QuantFormat::Q6K, 5, 256),
            call(QuantFormat::Q8_0, 3, 4096),
        ],
        host: vec![],
    }
}

#[test]
fn ratio_scale_invariant() {
    let tr = mixed_trace();
    let mut plan = OffloadPlan::none(Policy::Capacity);
    plan.per_type.insert(QuantFormat::F16, true);
    plan.per_type.insert(QuantFormat::Q8_0, true);
    plan.per_type.insert(QuantFormat::Q6K, false);
    plan.host_calls.insert(3);
    let base = offload_ratio(&plan, &tr);
    for k in [2, 3, 17] {
        let mut big = tr.clone();
        for c in &mut big.calls {
            c.rows *= k;
            c.weight_rows *= k;
        }
        let r = offload_ratio(&plan, &big);
        assert!((r.total - base.total).abs() < 1e-12);
        for (f, v) in &base.per_type {
            assert!((r.per_type[f] - v).abs() < 1e-12);
        }
    }
    // 7 + 13 of 7 + 13 + 5 + 3 rows run on the accelerator
    assert!((base.total - 20.0 / 28.0).abs() < 1e-12);
    assert!((base.per_type[&QuantFormat::Q8_0] - 13.0 / 16.0).abs() < 1e-12);
}

#[test]
fn dropping_a_type_zeroes_it() {
    let tr = mixed_trace();
    let mut plan = OffloadPlan::none(Policy::Pdp);
    for f in [QuantFormat::F16, QuantFormat::Q8_0, QuantFormat::Q6K] {
        plan.per_type.insert(f, true);
    }
    for f in [QuantFormat::F16, QuantFormat::Q8_0, QuantFormat::Q6K] {
        let mut p = plan.clone();
        p.per_type.insert(f, false);
        assert_eq!(offload_ratio(&p, &tr).per_type[&f], 0.0);
    }
    let none = offload_ratio(&OffloadPlan::none(Policy::Pdp), &tr);
    assert_eq!(none.total, 0.0);
    assert!(none.per_type.values().all(|v| *v == 0.0));
}

#[test]
fn plan_file_round_trip() {
    let cfg = profiles::machine("imax3-fpga").unwrap();
    let tr = build_trace(&profiles::model("qwen3-8b-q3ks").unwrap(), 8, 2).unwrap();
    let plan = plan_offload(&tr, &cfg, Policy::Pdp).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("plan.json");
    plan.save(&p).unwrap();
    assert_eq!(OffloadPlan::load(&p).unwrap(), plan);
}
