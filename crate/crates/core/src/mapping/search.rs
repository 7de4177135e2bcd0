use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::*;
use crate::dma_sched;
use crate::ir::FabricConfig;
use crate::vmg::{NodeId, ShotId, Vmg};

/// Hard cap on expanded search states.
pub const MAX_EXPANSIONS: usize = 10_000;
pub const DEFAULT_THRESHOLD: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapState {
    #[serde(skip)]
    pub vmg: Vmg,
    pub applied: Vec<Primitive>,
    pub v_node_number: usize,
    pub port_pressure: BTreeMap<NodeId, (usize, usize)>,
}

impl MapState {
    pub fn new(vmg: Vmg, applied: Vec<Primitive>) -> Self {
        Self {
            v_node_number: vmg.node_count(),
            port_pressure: vmg.port_pressure(),
            vmg,
            applied,
        }
    }

    /// Re-applies `applied` to `root`.
    pub fn replay(&self, root: &Vmg, fabric: &FabricConfig) -> Result<Vmg, IllegalRewrite> {
        self.applied.iter().try_fold(root.clone(), |g, p| apply(&g, p, fabric))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no feasible mapping with at most {budget} nodes ({explored} states explored)")]
pub struct NoFeasibleMapping {
    pub budget: usize,
    pub explored: usize,
}

/// Ordering key; smaller is tried first.
type Score = (Reverse<usize>, usize, usize, NodeId, NodeId, u8);

/// Priority of applying `p` to `g`: edges internalized (more first), the
/// largest per-node port pressure afterwards, the node count afterwards,
/// then the node pair, bundle before chain.
pub fn priority(g: &Vmg, p: &Primitive) -> Score {
    let owner = g.shot_nodes();
    let pressure = g.port_pressure();
    let (set, kind) = match p {
        Primitive::Bundle(ns) => (ns.clone(), 0),
        Primitive::Chain(u, v) => (vec![*u, *v], 1),
    };
    let internalized = match p {
        Primitive::Bundle(_) => 0,
        Primitive::Chain(u, v) => edges_between(g, &owner, *u, *v),
    };
    let merged = merged_pressure(g, &set);
    let rest = pressure
        .iter()
        .filter(|(n, _)| !set.contains(n))
        .map(|(_, p)| p.0.max(p.1))
        .max()
        .unwrap_or(0);
    let (a, b) = (*set.iter().min().unwrap(), *set.iter().max().unwrap());
    (
        Reverse(internalized),
        rest.max(merged.0.max(merged.1)),
        g.node_count() + 1 - set.len(),
        a,
        b,
        kind,
    )
}

/// Legal rewrites of `g` in priority order.
pub fn candidates(g: &Vmg, fabric: &FabricConfig) -> Vec<Primitive> {
    let ids: Vec<NodeId> = g.nodes.keys().copied().collect();
    let mut out = Vec::new();
    for (i, &u) in ids.iter().enumerate() {
        for &v in &ids[i + 1..] {
            if is_valid_bundle(g, &[u, v], fabric).is_ok() {
                out.push(Primitive::Bundle(vec![u, v]));
            }
            if is_valid_chain(g, u, v, fabric).is_ok() {
                out.push(Primitive::Chain(u, v));
            }
        }
    }
    let mut scored: Vec<(Score, Primitive)> = out.into_iter().map(|p| (priority(g, &p), p)).collect();
    scored.sort_by_key(|a| a.0);
    scored.into_iter().map(|(_, p)| p).collect()
}

/// True when the state fits the budget, respects port limits, places on
/// the fabric and admits a DMA schedule.
pub fn is_feasible(g: &Vmg, applied: &[Primitive], fabric: &FabricConfig, budget: usize) -> bool {
    if g.node_count() > budget {
        return false;
    }
    let ports_ok = g
        .port_pressure()
        .values()
        .all(|p| p.0 <= fabric.ports_in_per_tile && p.1 <= fabric.ports_out_per_tile);
    if !ports_ok {
        return false;
    }
    match place(g, applied, fabric) {
        Ok(m) => dma_sched::schedule(&m).is_ok(),
        Err(_) => false,
    }
}

struct Search<'a> {
    fabric: &'a FabricConfig,
    budget: usize,
    threshold: usize,
    seen: BTreeSet<BTreeSet<Vec<ShotId>>>,
    found: Vec<MapState>,
    expanded: usize,
}

impl Search<'_> {
    fn done(&self) -> bool {
        self.found.len() >= self.threshold || self.expanded >= MAX_EXPANSIONS
    }

    fn visit(&mut self, g: Vmg, applied: Vec<Primitive>) {
        if self.done() || !self.seen.insert(g.nodes.values().cloned().collect()) {
            return;
        }
        self.expanded += 1;
        if is_feasible(&g, &applied, self.fabric, self.budget) {
            self.found.push(MapState::new(g.clone(), applied.clone()));
        }
        for p in candidates(&g, self.fabric) {
            if self.done() {
                return;
            }
            let next = apply(&g, &p, self.fabric).expect("candidate is legal");
            let mut path = applied.clone();
            path.push(p);
            self.visit(next, path);
        }
    }
}

/// Depth-first search over rewrite sequences. Every edge of the search tree
/// removes one node. States with at most `budget` nodes that place and
/// schedule are recorded; the search stops after `threshold` of them.
pub fn search_mapping(
    g: &Vmg,
    fabric: &FabricConfig,
    budget: usize,
    threshold: usize,
) -> Result<Vec<MapState>, NoFeasibleMapping> {
    let mut s = Search {
        fabric,
        budget,
        threshold: threshold.max(1),
        seen: BTreeSet::new(),
        found: Vec::new(),
        expanded: 0,
    };
    s.visit(g.clone(), Vec::new());
    if s.found.is_empty() {
        return Err(NoFeasibleMapping {
            budget,
            explored: s.expanded,
        });
    }
    Ok(s.found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::vmg::build_lowered;

    fn fig7c() -> Vmg {
        build_lowered(
            &parse_program(
                r#"
task gemm[1, 1, 2](A: i16[8, 8] @ "S1S2", B: i16[8, 8] @ "S2S0", C: i16[8, 8] @ "S1S0") {
    C = allreduce(matmul(A, B), "+");
}"#,
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn budget_one_fuses_everything() {
        let g = fig7c();
        let f = FabricConfig::with_tiles(1, 1);
        let found = search_mapping(&g, &f, 1, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].v_node_number, 1);
        assert_eq!(found[0].port_pressure.values().next(), Some(&(2, 1)));
        assert_eq!(found[0].replay(&g, &f).unwrap(), found[0].vmg);
    }

    #[test]
    fn root_already_within_budget() {
        let g = fig7c();
        let found = search_mapping(&g, &FabricConfig::default(), 16, DEFAULT_THRESHOLD).unwrap();
        assert_eq!(found[0].vmg, g);
        assert!(found.iter().all(|s| s.v_node_number <= 16));
    }

    #[test]
    fn chain_outranks_bundle() {
        let p = parse_program(
            r#"
stream s: stream<i32>;
task p[1](X: i32) { s.put(X); }
task c[1](Y: i32) { Y = s.get(); }
task q[2](Z: i32[2] @ "S0") { Z = Z + 1; }
"#,
        )
        .unwrap();
        let g = build_lowered(&p).unwrap();
        let c = candidates(&g, &FabricConfig::default());
        // ids: c=0, p=1, q=2,3
        assert_eq!(c[0], Primitive::Chain(0, 1));
        assert!(c.contains(&Primitive::Bundle(vec![2, 3])));
        // in fig7c the multiply/adder chain needs three inputs and is excluded
        let c = candidates(&fig7c(), &FabricConfig::default());
        assert_eq!(c, vec![Primitive::Bundle(vec![0, 1]), Primitive::Chain(0, 1)]);
    }

    #[test]
    fn equal_scores_prefer_low_ids() {
        let p = parse_program(r#"task t[3](A: i32[12] @ "S0") { A = A + 1; }"#).unwrap();
        let g = build_lowered(&p).unwrap();
        let c = candidates(&g, &FabricConfig::default());
        assert_eq!(c[0], Primitive::Bundle(vec![0, 1]));
        assert_eq!(c[1], Primitive::Chain(0, 1));
    }

    #[test]
    fn infeasible_reports_error() {
        let p = parse_program("task a[1](P: i32, Q: i32, R: i32) { R = P + Q + R; }").unwrap();
        let g = build_lowered(&p).unwrap();
        let err = search_mapping(&g, &FabricConfig::default(), 4, 4).unwrap_err();
        assert_eq!(err.budget, 4);
    }
}
