//! One PASS/FAIL line per acceptance criterion. Runs without the test
//! harness so the lines always show: `cargo test -p datoc-cli --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use datoc::dma_sched::{build_transfers, check_port_safety, compute_epochs, delivered_elements, schedule};
use datoc::ir::{FabricConfig, Program};
use datoc::layout_opt::{dma_legal, hoist_to_dma, normalize, DmaCapability, Transform};
use datoc::mapping::{apply, candidates, place, search_mapping, Primitive, DEFAULT_THRESHOLD};
use datoc::parser::parse_program;
use datoc::sim::value::wrap_int;
use datoc::sim::{lcg_inputs, oracle_reference, run_functional, select_best, SimConfig, SimError, TensorValue};
use datoc::synth::{layout_chain, pipeline_program, stream_program};
use datoc::typecheck::{check_streams, StreamTypeError};
use datoc::vmg::{build_lowered, Shot, Vmg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/mod.rs"]
mod support;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

fn corpus(name: &str) -> Program {
    let src = std::fs::read_to_string(root().join("corpus").join(format!("{name}.dato"))).unwrap();
    parse_program(&src).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn c1_rejection() -> Verdict {
    let (r, dt) = timed(|| check_streams(&corpus("deadlock")));
    match r {
        Err(StreamTypeError::Deadlock { cycle, .. }) => {
            let names: Vec<&str> = cycle.iter().map(|w| w.stream.as_str()).collect();
            ensure(names.contains(&"sAB") && names.contains(&"sBA"), || {
                format!("cycle names {names:?}")
            })?;
        }
        other => return Err(format!("deadlock program: {other:?}")),
    }
    ensure(dt < Duration::from_secs(1), || format!("deadlock check took {dt:?}"))?;
    let (r, dt2) = timed(|| check_streams(&corpus("leak")));
    let Err(StreamTypeError::TokenLeak { residual, .. }) = r else {
        return Err(format!("leak program: {r:?}"));
    };
    ensure(residual == 4, || format!("residual {residual}"))?;
    ensure(dt2 < Duration::from_secs(1), || format!("leak check took {dt2:?}"))?;
    Ok(format!(
        "DEADLOCK on sAB/sBA in {dt:.1?}, TOKEN_LEAK residual 4 in {dt2:.1?}"
    ))
}

fn schoolbook(a: &[i64], b: &[i64], n: usize) -> Vec<i64> {
    let mut c = vec![0i64; n * n];
    for i in 0..n {
        for k in 0..n {
            let x = a[i * n + k];
            for j in 0..n {
                c[i * n + j] += x * b[k * n + j];
            }
        }
    }
    c.into_iter().map(|v| wrap_int(v, 16)).collect()
}

fn c2_gemm() -> Verdict {
    let start = Instant::now();
    let p = corpus("gemm");
    let g = build_lowered(&p).map_err(|e| e.to_string())?;
    let kind = |g: &Vmg, combine: bool| {
        g.nodes
            .values()
            .filter(|s| s.iter().all(|&i| matches!(g.shots[i], Shot::Combine(_)) == combine))
            .count()
    };
    let (compute, combine) = (kind(&g, false), kind(&g, true));
    ensure(compute == 8 && combine == 4 && g.node_count() == 12, || {
        format!("{compute} compute + {combine} combine nodes")
    })?;
    let fabric = FabricConfig::default();
    ensure(fabric.ports_in_per_tile == 2 && fabric.ports_out_per_tile == 2, || {
        "fabric ports".into()
    })?;
    let found = search_mapping(&g, &fabric, 16, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let (_, m, s, _) = select_best(&found, &SimConfig::for_fabric(&fabric)).map_err(|e| e.to_string())?;
    check_port_safety(&s.port_assignment, &fabric)?;
    for seed in 0..10 {
        let inputs = lcg_inputs(&g.buffers, seed);
        let out = run_functional(&m, &s, &inputs).map_err(|e| e.to_string())?;
        let want = schoolbook(inputs["A"].ints(), inputs["B"].ints(), 64);
        ensure(out.outputs["C"].ints() == want.as_slice(), || {
            format!("seed {seed}: C differs from schoolbook")
        })?;
    }
    let dt = start.elapsed();
    ensure(dt < Duration::from_secs(30), || format!("took {dt:?}"))?;
    Ok(format!(
        "8+4 nodes, {} nodes mapped at C=16, 10 seeds exact in {dt:.1?}",
        m.vmg.node_count()
    ))
}

fn c3_rewrites() -> Verdict {
    let fabric = FabricConfig {
        rows: 8,
        cols: 8,
        ..FabricConfig::default()
    };
    let outputs = |g: &Vmg, applied: &[Primitive], seed: u64| -> Option<BTreeMap<String, TensorValue>> {
        let m = place(g, applied, &fabric).ok()?;
        let s = schedule(&m).ok()?;
        Some(run_functional(&m, &s, &lcg_inputs(&g.buffers, seed)).ok()?.outputs)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut rewrites = 0;
    for n in 0..200 {
        let src = pipeline_program(&mut rng);
        let p = parse_program(&src).map_err(|e| e.to_string())?;
        let g = build_lowered(&p).map_err(|e| e.to_string())?;
        let seed = rng.gen();
        let base = outputs(&g, &[], seed).ok_or_else(|| format!("program {n} unmappable"))?;
        let oracle = oracle_reference(&p, &lcg_inputs(&g.buffers, seed)).map_err(|e| e.to_string())?;
        ensure(base == oracle, || format!("program {n} differs from oracle"))?;
        for prim in candidates(&g, &fabric) {
            let g1 = apply(&g, &prim, &fabric).map_err(|e| e.to_string())?;
            if let Some(out) = outputs(&g1, std::slice::from_ref(&prim), seed) {
                rewrites += 1;
                ensure(out == base, || format!("program {n}: {prim:?} changed outputs"))?;
            }
        }
    }
    Ok(format!("200 programs, {rewrites} rewrites, outputs unchanged"))
}

fn c4_streams() -> Verdict {
    let fabric = FabricConfig {
        ports_in_per_tile: 8,
        ports_out_per_tile: 8,
        ..FabricConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut accepted = 0;
    for n in 0..1000 {
        let src = stream_program(&mut rng, 12);
        let p = parse_program(&src).map_err(|e| e.to_string())?;
        let ok = check_streams(&p).is_ok();
        accepted += ok as usize;
        let completed = build_lowered(&p)
            .ok()
            .and_then(|g| place(&g, &[], &fabric).ok())
            .map(|m| {
                let s = schedule(&m).expect("schedulable");
                match run_functional(&m, &s, &lcg_inputs(&m.vmg.buffers, 1)) {
                    Ok(_) => true,
                    Err(SimError::Deadlock(_)) => false,
                    Err(e) => panic!("{e}"),
                }
            });
        if ok {
            ensure(completed == Some(true), || {
                format!("program {n} accepted but does not run:\n{src}")
            })?;
        }
        ensure(ok == support::exhaustive_accepts(&p), || {
            format!("program {n}: greedy and exhaustive disagree:\n{src}")
        })?;
    }
    Ok(format!(
        "1000 programs of at most 12 events ({accepted} accepted), exhaustive search agrees"
    ))
}

fn c5_layouts() -> Verdict {
    for seed in 0..500u64 {
        let c = layout_chain(&mut ChaCha8Rng::seed_from_u64(seed), 6);
        let n = normalize(&c).map_err(|e| e.to_string())?;
        let want = support::oracle(&c.input, &c.steps);
        ensure(support::oracle(&c.input, &n.steps) == want, || {
            format!("chain {seed}: normalize changed the index map")
        })?;
        ensure(n.steps.len() <= c.steps.len(), || {
            format!("chain {seed}: normalize lengthened")
        })?;
        ensure(normalize(&n).map_err(|e| e.to_string())? == n, || {
            format!("chain {seed}: not idempotent")
        })?;
        let cap = DmaCapability::default();
        let (desc, rest) = hoist_to_dma(&n, &cap).map_err(|e| e.to_string())?;
        ensure(desc.iter().all(|m| dma_legal(m, &cap)), || {
            format!("chain {seed}: illegal descriptor")
        })?;
        let mut steps: Vec<Transform> = desc.into_iter().map(Transform::Map).collect();
        steps.extend(rest.steps);
        ensure(support::oracle(&c.input, &steps) == want, || {
            format!("chain {seed}: hoist changed the index map")
        })?;
    }
    Ok("500 chains: normalize sound, shrinking, idempotent; hoist legal and exact".into())
}

fn c6_dma() -> Verdict {
    let mut checked = 0;
    for name in ["gemm", "producer_consumer", "fig7c", "ffn", "attention"] {
        let p = corpus(name);
        let g = build_lowered(&p).map_err(|e| e.to_string())?;
        for (r, c) in [(1, 4), (2, 4), (4, 4), (4, 5)] {
            let fabric = FabricConfig::with_tiles(r, c);
            let Ok(found) = search_mapping(&g, &fabric, r * c, DEFAULT_THRESHOLD) else {
                continue;
            };
            for cand in &found {
                let m = place(&cand.vmg, &cand.applied, &fabric).map_err(|e| e.to_string())?;
                let s = schedule(&m).map_err(|e| e.to_string())?;
                check_port_safety(&s.port_assignment, &fabric).map_err(|e| format!("{name} {r}x{c}: {e}"))?;
                let (_, of) = compute_epochs(&m);
                let raw = build_transfers(&m, &of);
                ensure(
                    delivered_elements(&raw, &g.buffers) == delivered_elements(&s.transfers, &g.buffers),
                    || format!("{name} {r}x{c}: elements not conserved"),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} schedules within 2 ports per direction, elements conserved"
    ))
}

fn best_cycles(p: &Program, rows: usize, cols: usize) -> Result<u64, String> {
    let fabric = FabricConfig::with_tiles(rows, cols);
    let g = build_lowered(p).map_err(|e| e.to_string())?;
    let found = search_mapping(&g, &fabric, rows * cols, DEFAULT_THRESHOLD).map_err(|e| e.to_string())?;
    let (_, _, _, t) = select_best(&found, &SimConfig::for_fabric(&fabric)).map_err(|e| e.to_string())?;
    Ok(t.cycles)
}

fn c7_scaling() -> Verdict {
    let p = corpus("gemm_large");
    let base = best_cycles(&p, 1, 4)? as f64;
    let r2 = best_cycles(&p, 2, 4)? as f64 / base;
    let r4 = best_cycles(&p, 4, 4)? as f64 / base;
    ensure(r2 <= 0.55 && r4 <= 0.35, || format!("2x4 {r2:.3}, 4x4 {r4:.3}"))?;
    Ok(format!("2x4 at {r2:.3}x, 4x4 at {r4:.3}x of 1x4 cycles"))
}

fn c8_fusion() -> Verdict {
    let fused = best_cycles(&corpus("ffn"), 4, 5)?;
    let serial = best_cycles(&corpus("ffn_up"), 4, 5)? + best_cycles(&corpus("ffn_down"), 4, 5)?;
    let speedup = serial as f64 / fused as f64;
    ensure(speedup >= 1.2, || format!("speedup {speedup:.3}"))?;
    Ok(format!("fused {fused} vs serial {serial} cycles, {speedup:.2}x"))
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_datoc"))
        .args(args)
        .current_dir(root())
        .output()
        .unwrap()
}

fn c9_artifacts() -> Verdict {
    let schema = |name: &str| {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("schemas/{name}.schema.json"));
        jsonschema::validator_for(&serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()).unwrap()
    };
    let mut docs = 0;
    for name in [
        "gemm",
        "producer_consumer",
        "fig7c",
        "ffn",
        "ffn_up",
        "ffn_down",
        "attention",
        "deadlock",
        "leak",
    ] {
        let f = format!("corpus/{name}.dato");
        for cmd in ["check", "map", "sim"] {
            let o = cli(&["--json", cmd, &f]);
            let v: serde_json::Value = serde_json::from_slice(&o.stdout).map_err(|e| format!("{cmd} {name}: {e}"))?;
            ensure(schema(cmd).is_valid(&v), || format!("{cmd} {name}: schema violation"))?;
            docs += 1;
        }
    }
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for name in ["gemm", "producer_consumer", "fig7c"] {
        let mut runs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            cli(&[
                "map",
                &format!("corpus/{name}.dato"),
                "--dot",
                dir.path().to_str().unwrap(),
            ]);
            let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap_or_default();
            runs.push((read("initial.dot"), read("selected.dot")));
        }
        ensure(runs[0] == runs[1], || format!("{name}: DOT differs between runs"))?;
        let want = |s: &str| std::fs::read(golden.join(format!("{name}.{s}.dot"))).unwrap_or_default();
        ensure(runs[0].0 == want("initial") && runs[0].1 == want("selected"), || {
            format!("{name}: DOT differs from golden")
        })?;
    }
    Ok(format!("{docs} JSON documents schema-valid, DOT stable and golden"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 stream checker rejects deadlock and leak", c1_rejection),
        ("2 GEMM 2x2x2 maps and matches schoolbook", c2_gemm),
        ("3 rewrites preserve outputs", c3_rewrites),
        ("4 checker, simulator and exhaustive search agree", c4_streams),
        ("5 layout normalize and hoist", c5_layouts),
        ("6 DMA port budget and conservation", c6_dma),
        ("7 multi-tile scaling", c7_scaling),
        ("8 pipeline fusion speedup", c8_fusion),
        ("9 schema-valid JSON and stable DOT", c9_artifacts),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        let (r, dt) = timed(f);
        match r {
            Ok(detail) => println!("PASS  {name}: {detail} [{dt:.1?}]"),
            Err(why) => {
                println!("FAIL  {name}: {why} [{dt:.1?}]");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
