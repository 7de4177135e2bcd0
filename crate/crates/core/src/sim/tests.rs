use std::collections::BTreeMap;

use super::*;
use crate::dma_sched::schedule;
use crate::ir::{ElemType, FabricConfig, Program};
use crate::mapping::{apply, place, PhysicalMapping, Primitive};
use crate::parser::parse_program;
use crate::vmg::build_lowered;

fn mapped(p: &Program, prims: &[Primitive]) -> PhysicalMapping {
    let f = FabricConfig::default();
    let mut g = build_lowered(p).unwrap();
    for pr in prims {
        g = apply(&g, pr, &f).unwrap();
    }
    place(&g, prims, &f).unwrap()
}

fn run(p: &Program, prims: &[Primitive], inputs: &BTreeMap<String, TensorValue>) -> Result<SimOutput, SimError> {
    let m = mapped(p, prims);
    let s = schedule(&m).unwrap();
    run_functional(&m, &s, inputs)
}

const PRODUCER_CONSUMER: &str = r#"
stream pipe: stream<i32[4]> depth 2;
task producer[1](A: i32[16]) {
    for i in range(4) {
        pipe.put(A[i * 4 : i * 4 + 4] + 1);
    }
}
task consumer[1](B: i32[16]) {
    for i in range(4) {
        B[i * 4 : i * 4 + 4] = pipe.get();
    }
}
"#;

#[test]
fn producer_consumer_adds_one() {
    let p = parse_program(PRODUCER_CONSUMER).unwrap();
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "A".to_string(),
        TensorValue::from_ints(ElemType::I32, vec![16], (0..16).collect()),
    );
    inputs.insert(
        "B".to_string(),
        TensorValue::zeros(&crate::ir::TensorType::new(ElemType::I32, vec![16])),
    );
    let want: Vec<i64> = (1..=16).collect();
    let o = run(&p, &[], &inputs).unwrap();
    assert_eq!(o.outputs["B"].ints(), want.as_slice());
    let o = oracle_reference(&p, &inputs).unwrap();
    assert_eq!(o["B"].ints(), want.as_slice());
    let o = run(&p, &[Primitive::Chain(0, 1)], &inputs).unwrap();
    assert_eq!(o.outputs["B"].ints(), want.as_slice());
}

fn schoolbook(a: &TensorValue, b: &TensorValue, n: usize, bits: u32) -> Vec<i64> {
    let (a, b) = (a.ints(), b.ints());
    let mut c = vec![0i64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0i64;
            for k in 0..n {
                acc = value::wrap_int(acc + a[i * n + k] * b[k * n + j], bits);
            }
            c[i * n + j] = acc;
        }
    }
    c
}

#[test]
fn gemm_matches_schoolbook() {
    let src = r#"task gemm[2, 2, 2](A: i16[16, 16] @ "S1S2", B: i16[16, 16] @ "S2S0", C: i16[16, 16] @ "S1S0") {
    C = allreduce(matmul(A, B), "+");
}"#;
    let p = parse_program(src).unwrap();
    let m = mapped(&p, &[]);
    for seed in 0..3 {
        let inputs = lcg_inputs(&m.vmg.buffers, seed);
        let want = schoolbook(&inputs["A"], &inputs["B"], 16, 16);
        let o = run_functional(&m, &schedule(&m).unwrap(), &inputs).unwrap();
        assert_eq!(o.outputs["C"].ints(), want.as_slice());
        assert_eq!(oracle_reference(&p, &inputs).unwrap()["C"].ints(), want.as_slice());
    }
}

#[test]
fn one_tile_matmul_cycles() {
    let src = r#"task mm[1](A: i8[64, 64], B: i8[64, 64], C: i8[64, 64]) { C = matmul(A, B); }"#;
    let m = mapped(&parse_program(src).unwrap(), &[]);
    let s = schedule(&m).unwrap();
    let inputs = lcg_inputs(&m.vmg.buffers, 1);
    let t = run_timed(&m, &s, &inputs, &SimConfig::for_fabric(&m.fabric)).unwrap();
    assert_eq!(t.mac_cycles, 4096);
    assert!(t.cycles >= 4096);
}

#[test]
fn cross_wait_deadlocks() {
    let src = r#"
stream s1: stream<i32[4]> depth 1;
stream s2: stream<i32[4]> depth 1;
task a[1](X: i32[4]) { X = s2.get(); s1.put(X); }
task b[1](Y: i32[4]) { Y = s1.get(); s2.put(Y); }
"#;
    let p = parse_program(src).unwrap();
    let m = mapped(&p, &[]);
    let inputs = lcg_inputs(&m.vmg.buffers, 0);
    let err = run_functional(&m, &schedule(&m).unwrap(), &inputs).unwrap_err();
    let SimError::Deadlock(d) = err else { panic!("{err}") };
    assert_eq!(d.wait_cycle.len(), 2);
    let mut chans = d.cycle_channels.clone();
    chans.sort();
    assert!(chans[0].contains("s1") && chans[1].contains("s2"), "{chans:?}");
    assert!(matches!(oracle_reference(&p, &inputs), Err(SimError::Deadlock(_))));
}

#[test]
fn phantom_timing_equals_real() {
    let p = parse_program(PRODUCER_CONSUMER).unwrap();
    let m = mapped(&p, &[]);
    let s = schedule(&m).unwrap();
    let inputs = lcg_inputs(&m.vmg.buffers, 3);
    let real = run_timed(&m, &s, &inputs, &SimConfig::for_fabric(&m.fabric)).unwrap();
    let cfg = SimConfig {
        phantom: true,
        ..SimConfig::for_fabric(&m.fabric)
    };
    let ph = run_timed(&m, &s, &inputs, &cfg).unwrap();
    assert_eq!(real.cycles, ph.cycles);
    assert!(real.utilization <= 1.0);
}
