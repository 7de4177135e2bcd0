use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::ir::FabricConfig;
use crate::vmg::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Primitive {
    Bundle(Vec<NodeId>),
    Chain(NodeId, NodeId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal rewrite: {0}")]
pub struct IllegalRewrite(pub String);

/// Shot signature used for isomorphism. Instances of one task run the same
/// code and differ only in tid-bound I/O, so the task name identifies them.
fn shot_signature(s: &Shot) -> String {
    match s {
        Shot::Task(t) => format!("task:{}", t.task),
        Shot::Combine(c) => format!(
            "combine:{}:{}:{}:{}",
            c.task,
            c.param,
            c.op.symbol(),
            matches!(c.output, CombineOutput::Param { .. })
        ),
    }
}

fn node_signature(g: &Vmg, n: NodeId) -> BTreeSet<String> {
    g.nodes[&n].iter().map(|s| shot_signature(&g.shots[*s])).collect()
}

/// Role sets of a node with respect to the current grouping.
fn node_roles(g: &Vmg, owner: &[NodeId], n: NodeId) -> (BTreeSet<String>, BTreeSet<String>) {
    roles_of(g, owner, &[n])
}

/// Global roles of the union of `set`, treating channels inside the union
/// as internal.
fn roles_of(g: &Vmg, owner: &[NodeId], set: &[NodeId]) -> (BTreeSet<String>, BTreeSet<String>) {
    let inside = |s: ShotId| set.contains(&owner[s]);
    let mut ins = BTreeSet::new();
    let mut outs = BTreeSet::new();
    for n in set {
        for &s in &g.nodes[n] {
            let (i, o) = g.shots[s].dma_roles();
            ins.extend(i);
            outs.extend(o);
        }
    }
    for ch in &g.channels {
        let (a, b) = (inside(ch.src), inside(ch.dst));
        if a && !b {
            outs.insert(ch.src_role.clone());
        }
        if b && !a {
            ins.insert(ch.dst_role.clone());
        }
    }
    (ins, outs)
}

/// Global port usage of the node that would result from merging `set`.
pub fn merged_pressure(g: &Vmg, set: &[NodeId]) -> (usize, usize) {
    let owner = g.shot_nodes();
    let (i, o) = roles_of(g, &owner, set);
    (i.len(), o.len())
}

fn reaches(
    succ: &BTreeMap<NodeId, BTreeSet<NodeId>>,
    starts: impl IntoIterator<Item = NodeId>,
    target: NodeId,
) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<NodeId> = starts.into_iter().collect();
    while let Some(n) = queue.pop_front() {
        if n == target {
            return true;
        }
        if !seen.insert(n) {
            continue;
        }
        queue.extend(succ[&n].iter().copied());
    }
    false
}

/// True when some path leads from `a` to `b` through at least one other node.
fn indirect_path(succ: &BTreeMap<NodeId, BTreeSet<NodeId>>, a: NodeId, b: NodeId) -> bool {
    reaches(succ, succ[&a].iter().copied().filter(|&x| x != b), b)
}

fn fits(p: (usize, usize), fabric: &FabricConfig) -> bool {
    p.0 <= fabric.ports_in_per_tile && p.1 <= fabric.ports_out_per_tile
}

pub fn is_valid_bundle(g: &Vmg, nodes: &[NodeId], fabric: &FabricConfig) -> Result<(), IllegalRewrite> {
    let bad = |m: String| Err(IllegalRewrite(m));
    let set: BTreeSet<NodeId> = nodes.iter().copied().collect();
    if set.len() < 2 || set.len() != nodes.len() {
        return bad("bundle needs at least two distinct nodes".into());
    }
    if let Some(n) = nodes.iter().find(|n| !g.nodes.contains_key(n)) {
        return bad(format!("unknown node {n}"));
    }
    let sig = node_signature(g, nodes[0]);
    let owner = g.shot_nodes();
    let roles = node_roles(g, &owner, nodes[0]);
    for &n in &nodes[1..] {
        if node_signature(g, n) != sig {
            return bad(format!("nodes {} and {n} do not run the same computation", nodes[0]));
        }
        if node_roles(g, &owner, n) != roles {
            return bad(format!("nodes {} and {n} have different I/O interfaces", nodes[0]));
        }
    }
    let succ = g.successors();
    for &a in nodes {
        for &b in nodes {
            if a != b && reaches(&succ, succ[&a].iter().copied(), b) {
                return bad(format!("node {b} depends on node {a}"));
            }
        }
    }
    let p = merged_pressure(g, nodes);
    if !fits(p, fabric) {
        return bad(format!("bundled node needs {}/{} global ports", p.0, p.1));
    }
    Ok(())
}

pub fn is_valid_chain(g: &Vmg, u: NodeId, v: NodeId, fabric: &FabricConfig) -> Result<(), IllegalRewrite> {
    let bad = |m: String| Err(IllegalRewrite(m));
    if u == v {
        return bad("cannot chain a node with itself".into());
    }
    if !g.nodes.contains_key(&u) || !g.nodes.contains_key(&v) {
        return bad("unknown node".into());
    }
    let succ = g.successors();
    if indirect_path(&succ, u, v) || indirect_path(&succ, v, u) {
        return bad(format!("nodes {u} and {v} are connected through another node"));
    }
    if succ.get(&u).is_some_and(|s| s.contains(&v)) && succ.get(&v).is_some_and(|s| s.contains(&u)) {
        return bad(format!("nodes {u} and {v} exchange data in both directions"));
    }
    let p = merged_pressure(g, &[u, v]);
    if !fits(p, fabric) {
        return bad(format!("chained node needs {}/{} global ports", p.0, p.1));
    }
    Ok(())
}

fn fresh_id(g: &Vmg) -> NodeId {
    g.nodes.keys().next_back().map_or(0, |n| n + 1)
}

/// Merges `nodes` into one multi-shot node. Shots keep the ascending
/// node-id order of their origins.
pub fn apply_bundle(g: &Vmg, nodes: &[NodeId], fabric: &FabricConfig) -> Result<Vmg, IllegalRewrite> {
    is_valid_bundle(g, nodes, fabric)?;
    let mut out = g.clone();
    let mut sorted = nodes.to_vec();
    sorted.sort();
    let mut shots = Vec::new();
    for n in &sorted {
        shots.extend(out.nodes.remove(n).expect("checked"));
    }
    let id = fresh_id(g);
    out.nodes.insert(id, shots);
    Ok(out)
}

/// Fuses `u` and `v` into one sequential node, producer first.
pub fn apply_chain(g: &Vmg, u: NodeId, v: NodeId, fabric: &FabricConfig) -> Result<Vmg, IllegalRewrite> {
    is_valid_chain(g, u, v, fabric)?;
    let succ = g.successors();
    let (first, second) = if succ[&u].contains(&v) {
        (u, v)
    } else if succ[&v].contains(&u) {
        (v, u)
    } else {
        (u.min(v), u.max(v))
    };
    let mut out = g.clone();
    let mut shots = out.nodes.remove(&first).expect("checked");
    shots.extend(out.nodes.remove(&second).expect("checked"));
    let id = fresh_id(g);
    out.nodes.insert(id, shots);
    Ok(out)
}

pub fn apply(g: &Vmg, p: &Primitive, fabric: &FabricConfig) -> Result<Vmg, IllegalRewrite> {
    match p {
        Primitive::Bundle(ns) => apply_bundle(g, ns, fabric),
        Primitive::Chain(u, v) => apply_chain(g, *u, *v, fabric),
    }
}

/// Number of channels running between `a` and `b` (either direction).
pub fn edges_between(g: &Vmg, owner: &[NodeId], a: NodeId, b: NodeId) -> usize {
    g.channels
        .iter()
        .filter(|c| {
            let (x, y) = (owner[c.src], owner[c.dst]);
            (x == a && y == b) || (x == b && y == a)
        })
        .count()
}
