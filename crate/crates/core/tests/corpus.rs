//! Every corpus program through the whole pipeline.

use std::path::PathBuf;

use datoc::ir::{FabricConfig, Program};
use datoc::parser::parse_program;
use datoc::typecheck::{check_layouts, check_streams};

fn corpus(name: &str) -> Program {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(name);
    let src = std::fs::read_to_string(&path).unwrap();
    parse_program(&src).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const CLEAN: [&str; 8] = [
    "gemm.dato",
    "producer_consumer.dato",
    "fig7c.dato",
    "ffn.dato",
    "ffn_up.dato",
    "ffn_down.dato",
    "attention.dato",
    "gemm_large.dato",
];

#[test]
fn clean_programs_check() {
    for name in CLEAN {
        let p = corpus(name);
        check_streams(&p).unwrap_or_else(|e| panic!("{name}: {e}"));
        check_layouts(&p).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let _ = FabricConfig::default();
}

#[test]
fn negative_programs_are_rejected() {
    let e = check_streams(&corpus("deadlock.dato")).unwrap_err();
    assert_eq!(e.code(), "DEADLOCK");
    let e = check_streams(&corpus("leak.dato")).unwrap_err();
    assert_eq!(e.code(), "TOKEN_LEAK");
}

use datoc::dma_sched::{build_transfers, check_port_safety, compute_epochs, delivered_elements, schedule};
use datoc::mapping::{place, search_mapping, DEFAULT_THRESHOLD};
use datoc::sim::{lcg_inputs, oracle_reference, run_functional, select_best, SimConfig};
use datoc::vmg::build_lowered;

#[test]
fn mapped_simulation_matches_oracle() {
    let fabric = FabricConfig::default();
    let budget = fabric.rows * fabric.cols;
    for name in CLEAN {
        let p = corpus(name);
        let g = build_lowered(&p).unwrap();
        let found = search_mapping(&g, &fabric, budget, DEFAULT_THRESHOLD).unwrap_or_else(|e| panic!("{name}: {e}"));
        for c in &found {
            let m = place(&c.vmg, &c.applied, &fabric).unwrap();
            let s = schedule(&m).unwrap();
            check_port_safety(&s.port_assignment, &fabric).unwrap_or_else(|e| panic!("{name}: {e}"));
            let (_, of) = compute_epochs(&m);
            let raw = build_transfers(&m, &of);
            assert_eq!(
                delivered_elements(&raw, &g.buffers),
                delivered_elements(&s.transfers, &g.buffers),
                "{name}"
            );
        }
        let (_, m, s, _) = select_best(&found, &SimConfig::for_fabric(&fabric)).unwrap();
        let inputs = lcg_inputs(&g.buffers, 42);
        let out = run_functional(&m, &s, &inputs).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(out.outputs, oracle_reference(&p, &inputs).unwrap(), "{name}");
    }
}
