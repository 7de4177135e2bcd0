//! Token-based DMA scheduling for a placed mapping.
//!
//! Steps are shot indices inside a node. Each parameter tile a shot reads
//! becomes an input transfer, each tile it writes back an output transfer.

mod opt;
mod ports;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::mapping::{PhysicalMapping, Tile};
use crate::vmg::{CombineOutput, NodeId, Shot, ShotId, TileRegion};

pub use opt::{coalesce_spatial, merge_multicast, split_for_ports};
pub use ports::{
    assign_ports, check_port_safety, delivered_elements, dma_budgets, render_gantt, PortAssignment, PortLane, PortSlot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Direction {
    In,
    Out,
}

/// One shot that consumes (In) or produces (Out) the transferred data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dest {
    pub tile: Tile,
    pub node: NodeId,
    pub shot: ShotId,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transfer {
    pub id: usize,
    pub buffer: String,
    pub region: TileRegion,
    pub direction: Direction,
    pub epoch: usize,
    pub token: usize,
    pub elements: usize,
    pub dests: Vec<Dest>,
}

impl Transfer {
    pub fn tiles(&self) -> BTreeSet<Tile> {
        self.dests.iter().map(|d| d.tile).collect()
    }

    /// Inclusive `[first, last]` step on `tile`.
    pub fn lifetime_on(&self, tile: Tile) -> Option<(usize, usize)> {
        let steps = self.dests.iter().filter(|d| d.tile == tile).map(|d| d.step);
        let lo = steps.clone().min()?;
        Some((lo, steps.max()?))
    }

    pub fn step_range(&self) -> (usize, usize) {
        let lo = self.dests.iter().map(|d| d.step).min().unwrap_or(0);
        let hi = self.dests.iter().map(|d| d.step).max().unwrap_or(0);
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Epoch {
    pub index: usize,
    pub tasks: BTreeSet<String>,
    pub args: BTreeSet<String>,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[error("DMA demand exceeds the {direction:?} port budget of tile ({}, {}) at step {step}", tile.0, tile.1)]
pub struct SchedError {
    pub tile: Tile,
    pub step: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmaSchedule {
    pub epochs: Vec<Epoch>,
    pub transfers: Vec<Transfer>,
    pub port_assignment: PortAssignment,
}

impl DmaSchedule {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("schedule serializes")
    }
}

/// Parameter name to epoch index.
pub type EpochOf = BTreeMap<String, usize>;

fn shot_steps(m: &PhysicalMapping) -> Vec<(NodeId, usize)> {
    let mut out = vec![(0, 0); m.vmg.shots.len()];
    for (n, shots) in &m.vmg.nodes {
        for (i, s) in shots.iter().enumerate() {
            out[*s] = (*n, i);
        }
    }
    out
}

fn shot_params(s: &Shot) -> Vec<String> {
    match s {
        Shot::Task(t) => t.reads.iter().chain(t.written_params().iter()).cloned().collect(),
        Shot::Combine(c) => match &c.output {
            CombineOutput::Param { .. } => vec![c.param.clone()],
            CombineOutput::Channel(_) => vec![],
        },
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    parent[x] = r;
    r
}

/// Groups tasks into epochs. A task's live range is the span of steps its
/// shots occupy; tasks with overlapping ranges or a shared argument land in
/// one epoch. Epochs are numbered by start step.
pub fn compute_epochs(m: &PhysicalMapping) -> (Vec<Epoch>, BTreeMap<String, usize>) {
    let steps = shot_steps(m);
    let mut spans: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut args: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (id, s) in m.vmg.shots.iter().enumerate() {
        let step = steps[id].1;
        let e = spans.entry(s.task_name().to_string()).or_insert((step, step));
        e.0 = e.0.min(step);
        e.1 = e.1.max(step);
        args.entry(s.task_name().to_string())
            .or_default()
            .extend(shot_params(s));
    }
    let names: Vec<&String> = spans.keys().collect();
    let mut parent: Vec<usize> = (0..names.len()).collect();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let (a, b) = (spans[names[i]], spans[names[j]]);
            let overlap = a.0 <= b.1 && b.0 <= a.1;
            let shared = !args[names[i]].is_disjoint(&args[names[j]]);
            if overlap || shared {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Epoch> = BTreeMap::new();
    for (i, name) in names.iter().enumerate() {
        let r = find(&mut parent, i);
        let e = groups.entry(r).or_insert(Epoch {
            index: 0,
            tasks: BTreeSet::new(),
            args: BTreeSet::new(),
            start: usize::MAX,
            end: 0,
        });
        e.tasks.insert((*name).clone());
        e.args.extend(args[*name].iter().cloned());
        e.start = e.start.min(spans[*name].0);
        e.end = e.end.max(spans[*name].1);
    }
    let mut epochs: Vec<Epoch> = groups.into_values().collect();
    epochs.sort_by_key(|e| (e.start, e.tasks.iter().next().cloned()));
    let mut of_task = BTreeMap::new();
    for (i, e) in epochs.iter_mut().enumerate() {
        e.index = i;
        for t in &e.tasks {
            of_task.insert(t.clone(), i);
        }
    }
    (epochs, of_task)
}

/// Replica index of each shot among same-task shots of its node.
pub fn tokens(m: &PhysicalMapping) -> Vec<usize> {
    let mut out = vec![0; m.vmg.shots.len()];
    for shots in m.vmg.nodes.values() {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for &s in shots {
            let c = seen.entry(m.vmg.shots[s].task_name()).or_insert(0);
            out[s] = *c;
            *c += 1;
        }
    }
    out
}

/// One transfer per (shot, parameter tile, direction), before any
/// optimization.
pub fn build_transfers(m: &PhysicalMapping, epoch_of_task: &BTreeMap<String, usize>) -> Vec<Transfer> {
    let steps = shot_steps(m);
    let toks = tokens(m);
    let mut out = Vec::new();
    let mut push = |buffer: &str, region: &TileRegion, direction, shot: ShotId, task: &str| {
        let (node, step) = steps[shot];
        out.push(Transfer {
            id: out.len(),
            buffer: buffer.to_string(),
            region: region.clone(),
            direction,
            epoch: epoch_of_task[task],
            token: toks[shot],
            elements: region.numel(),
            dests: vec![Dest {
                tile: m.tile_of(node),
                node,
                shot,
                step,
            }],
        });
    };
    for (id, s) in m.vmg.shots.iter().enumerate() {
        match s {
            Shot::Task(t) => {
                for p in &t.reads {
                    push(p, &t.regions[p], Direction::In, id, &t.task);
                }
                for p in &t.written_params() {
                    push(p, &t.regions[p], Direction::Out, id, &t.task);
                }
            }
            Shot::Combine(c) => {
                if let CombineOutput::Param { region, .. } = &c.output {
                    push(&c.param, region, Direction::Out, id, &c.task);
                }
            }
        }
    }
    out
}

fn renumber(ts: &mut [Transfer]) {
    ts.sort_by(|a, b| {
        (a.epoch, a.step_range().0, a.direction, &a.buffer, &a.region.dims).cmp(&(
            b.epoch,
            b.step_range().0,
            b.direction,
            &b.buffer,
            &b.region.dims,
        ))
    });
    for (i, t) in ts.iter_mut().enumerate() {
        t.id = i;
    }
}

/// Full pass: epochs, transfers, multicast merging, coalescing, splitting,
/// port assignment.
pub fn schedule(m: &PhysicalMapping) -> Result<DmaSchedule, SchedError> {
    let (epochs, of_task) = compute_epochs(m);
    let raw = build_transfers(m, &of_task);
    let mut ts = merge_multicast(raw);
    ts = coalesce_spatial(ts);
    ts = split_for_ports(ts, m);
    renumber(&mut ts);
    let port_assignment = assign_ports(&ts, m)?;
    Ok(DmaSchedule {
        epochs,
        transfers: ts,
        port_assignment,
    })
}

#[cfg(test)]
mod tests;
