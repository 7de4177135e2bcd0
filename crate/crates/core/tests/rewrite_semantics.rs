//! Mapping rewrites and lowering never change program outputs.

use datoc::dma_sched::schedule;
use datoc::ir::FabricConfig;
use datoc::mapping::{apply, candidates, place, Primitive};
use datoc::parser::parse_program;
use datoc::sim::{lcg_inputs, oracle_reference, run_functional};
use datoc::synth::pipeline_program;
use datoc::vmg::{build_lowered, Vmg};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fabric() -> FabricConfig {
    FabricConfig {
        rows: 8,
        cols: 8,
        ..FabricConfig::default()
    }
}

fn outputs(
    g: &Vmg,
    applied: &[Primitive],
    seed: u64,
) -> Option<std::collections::BTreeMap<String, datoc::sim::TensorValue>> {
    let m = place(g, applied, &fabric()).ok()?;
    let s = schedule(&m).ok()?;
    Some(run_functional(&m, &s, &lcg_inputs(&g.buffers, seed)).unwrap().outputs)
}

#[test]
fn legal_rewrites_preserve_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let f = fabric();
    let mut rewrites = 0;
    for _ in 0..200 {
        let src = pipeline_program(&mut rng);
        let p = parse_program(&src).unwrap();
        let g = build_lowered(&p).unwrap();
        let seed = rng.gen();
        let base = outputs(&g, &[], seed).unwrap_or_else(|| panic!("unmappable:\n{src}"));
        assert_eq!(
            base,
            oracle_reference(&p, &lcg_inputs(&g.buffers, seed)).unwrap(),
            "oracle mismatch:\n{src}"
        );
        for prim in candidates(&g, &f) {
            let g1 = apply(&g, &prim, &f).unwrap();
            let Some(out) = outputs(&g1, std::slice::from_ref(&prim), seed) else {
                continue;
            };
            rewrites += 1;
            assert_eq!(out, base, "{prim:?} changed outputs:\n{src}");
            // A second rewrite on top of the first.
            if let Some(second) = candidates(&g1, &f).first() {
                let g2 = apply(&g1, second, &f).unwrap();
                if let Some(out) = outputs(&g2, &[prim.clone(), second.clone()], seed) {
                    assert_eq!(out, base, "{prim:?} then {second:?} changed outputs:\n{src}");
                }
            }
        }
    }
    assert!(rewrites > 200, "only {rewrites} rewrites exercised");
}
