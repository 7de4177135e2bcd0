//! Layout chain invariants checked against an explicit index oracle.

use datoc::layout_opt::*;
use datoc::synth::layout_chain;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod support;
use support::oracle;

fn chain_for(seed: u64) -> TransformChain {
    layout_chain(&mut ChaCha8Rng::seed_from_u64(seed), 6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn normalize_preserves_index_map(seed in any::<u64>()) {
        let c = chain_for(seed);
        let n = normalize(&c).unwrap();
        prop_assert_eq!(oracle(&c.input, &n.steps), oracle(&c.input, &c.steps));
        prop_assert!(n.steps.len() <= c.steps.len());
        prop_assert_eq!(normalize(&n).unwrap(), n);
    }

    #[test]
    fn hoist_reproduces_chain(seed in any::<u64>(), dims in 1usize..4, t2d in any::<bool>()) {
        let c = normalize(&chain_for(seed)).unwrap();
        let cap = DmaCapability { max_dims: dims, supports_transpose2d: t2d, ..DmaCapability::default() };
        let (desc, residual) = hoist_to_dma(&c, &cap).unwrap();
        prop_assert!(desc.iter().all(|m| dma_legal(m, &cap)));
        let mut steps: Vec<Transform> = desc.into_iter().map(Transform::Map).collect();
        steps.extend(residual.steps);
        prop_assert_eq!(oracle(&c.input, &steps), oracle(&c.input, &c.steps));
    }

    #[test]
    fn compose_is_associative(seed in any::<u64>()) {
        let c = chain_for(seed);
        let maps = c.to_maps().unwrap();
        prop_assume!(maps.len() >= 3);
        let (a, b, d) = (&maps[0], &maps[1], &maps[2]);
        let left = match compose(a, b) { Composed::Map(ab) => compose(&ab, d), n => n };
        let right = match compose(b, d) { Composed::Map(bd) => compose(a, &bd), n => n };
        if let (Composed::Map(l), Composed::Map(r)) = (&left, &right) {
            let one = |m: &LayoutMap| oracle(&c.input, &[Transform::Map(m.clone())]);
            prop_assert_eq!(one(l), one(r));
        }
    }

    #[test]
    fn gather_agrees_with_oracle(seed in any::<u64>()) {
        let c = chain_for(seed);
        prop_assert_eq!(c.gather().unwrap(), oracle(&c.input, &c.steps).1);
    }
}
