use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PortSlot {
    pub port: usize,
    pub transfer: usize,
    pub acquire: usize,
    pub release: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PortLane {
    pub tile: Tile,
    pub direction: Direction,
    pub budget: usize,
    pub slots: Vec<PortSlot>,
}

pub type PortAssignment = Vec<PortLane>;

/// Ports left for DMA on each (tile, direction): the fabric budget minus the
/// stream and reduction roles the node already uses across tiles.
pub fn dma_budgets(m: &PhysicalMapping) -> BTreeMap<(Tile, Direction), usize> {
    let g = &m.vmg;
    let owner = g.shot_nodes();
    let mut ins: BTreeMap<NodeId, BTreeSet<&str>> = BTreeMap::new();
    let mut outs: BTreeMap<NodeId, BTreeSet<&str>> = BTreeMap::new();
    for ch in &g.channels {
        let (a, b) = (owner[ch.src], owner[ch.dst]);
        if a != b {
            outs.entry(a).or_default().insert(&ch.src_role);
            ins.entry(b).or_default().insert(&ch.dst_role);
        }
    }
    let mut out = BTreeMap::new();
    for n in g.nodes.keys() {
        let tile = m.tile_of(*n);
        let used_in = ins.get(n).map_or(0, |s| s.len());
        let used_out = outs.get(n).map_or(0, |s| s.len());
        out.insert(
            (tile, Direction::In),
            m.fabric.ports_in_per_tile.saturating_sub(used_in),
        );
        out.insert(
            (tile, Direction::Out),
            m.fabric.ports_out_per_tile.saturating_sub(used_out),
        );
    }
    out
}

/// Greedy interval colouring per (tile, direction). Intervals are sorted by
/// (epoch, first step, id) and take the lowest port whose previous holder
/// released strictly before the new acquire step.
/// Start, end, transfer id and element count of one port use.
type Interval = (usize, usize, usize, usize);

pub fn assign_ports(ts: &[Transfer], m: &PhysicalMapping) -> Result<PortAssignment, SchedError> {
    let budgets = dma_budgets(m);
    let mut lanes: BTreeMap<(Tile, Direction), Vec<Interval>> = BTreeMap::new();
    for t in ts {
        for tile in t.tiles() {
            let (lo, hi) = t.lifetime_on(tile).expect("tile of transfer");
            lanes
                .entry((tile, t.direction))
                .or_default()
                .push((t.epoch, lo, t.id, hi));
        }
    }
    let mut out = Vec::new();
    for ((tile, direction), mut ivs) in lanes {
        ivs.sort();
        let budget = budgets.get(&(tile, direction)).copied().unwrap_or(0);
        let mut free_after: Vec<Option<usize>> = vec![None; budget];
        let mut slots = Vec::new();
        for (_, lo, id, hi) in ivs {
            let port = free_after
                .iter()
                .position(|f| f.is_none_or(|r| r < lo))
                .ok_or(SchedError {
                    tile,
                    step: lo,
                    direction,
                })?;
            free_after[port] = Some(hi);
            slots.push(PortSlot {
                port,
                transfer: id,
                acquire: lo,
                release: hi,
            });
        }
        out.push(PortLane {
            tile,
            direction,
            budget,
            slots,
        });
    }
    Ok(out)
}

/// Sweep check: at every step no lane runs more transfers than its budget
/// or the fabric limit, and transfers sharing a port never overlap.
pub fn check_port_safety(pa: &PortAssignment, fabric: &crate::ir::FabricConfig) -> Result<(), String> {
    for lane in pa {
        let limit = match lane.direction {
            Direction::In => fabric.ports_in_per_tile,
            Direction::Out => fabric.ports_out_per_tile,
        };
        let mut events: Vec<(usize, i64)> = Vec::new();
        for s in &lane.slots {
            events.push((s.acquire, 1));
            events.push((s.release + 1, -1));
        }
        events.sort();
        let mut active = 0i64;
        for (step, d) in events {
            active += d;
            if active as usize > lane.budget.min(limit) {
                return Err(format!(
                    "tile ({}, {}) {:?}: {active} transfers at step {step}",
                    lane.tile.0, lane.tile.1, lane.direction
                ));
            }
        }
        let mut by_port: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for s in &lane.slots {
            by_port.entry(s.port).or_default().push((s.acquire, s.release));
        }
        for ivs in by_port.values_mut() {
            ivs.sort();
            if ivs.windows(2).any(|w| w[1].0 <= w[0].1) {
                return Err(format!(
                    "tile ({}, {}) shares a port between overlapping transfers",
                    lane.tile.0, lane.tile.1
                ));
            }
        }
    }
    Ok(())
}

/// Set of `(buffer, flat element, tile, direction)` moved by `ts`.
pub fn delivered_elements(
    ts: &[Transfer],
    buffers: &[(String, crate::ir::TensorType)],
) -> BTreeSet<(String, usize, Tile, Direction)> {
    let shapes: BTreeMap<&str, &[usize]> = buffers.iter().map(|(n, t)| (n.as_str(), t.shape.as_slice())).collect();
    let mut out = BTreeSet::new();
    for t in ts {
        let shape = shapes[t.buffer.as_str()];
        for idx in region_indices(&t.region, shape) {
            for tile in t.tiles() {
                out.insert((t.buffer.clone(), idx, tile, t.direction));
            }
        }
    }
    out
}

/// Row-major flat indices covered by `r` inside a buffer of `shape`.
pub fn region_indices(r: &TileRegion, shape: &[usize]) -> Vec<usize> {
    let mut out = vec![0usize];
    for (axis, &(off, size)) in r.dims.iter().enumerate() {
        let mut next = Vec::with_capacity(out.len() * size);
        for base in &out {
            for i in off..off + size {
                next.push(base * shape[axis] + i);
            }
        }
        out = next;
    }
    out
}

/// Text Gantt chart: one row per (tile, direction, port).
pub fn render_gantt(s: &DmaSchedule) -> String {
    let last = s
        .port_assignment
        .iter()
        .flat_map(|l| l.slots.iter().map(|x| x.release))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    for lane in &s.port_assignment {
        let ports = lane.slots.iter().map(|x| x.port + 1).max().unwrap_or(0);
        for p in 0..ports {
            let mut row = vec!['.'; last + 1];
            let mut names = Vec::new();
            for slot in lane.slots.iter().filter(|x| x.port == p) {
                let t = &s.transfers[slot.transfer];
                for c in row.iter_mut().take(slot.release + 1).skip(slot.acquire) {
                    *c = '#';
                }
                names.push(format!("{}#{}@e{}", t.buffer, t.id, t.epoch));
            }
            let dir = match lane.direction {
                Direction::In => "in ",
                Direction::Out => "out",
            };
            let _ = writeln!(
                out,
                "({},{}) {dir} p{p} |{}| {}",
                lane.tile.0,
                lane.tile.1,
                row.iter().collect::<String>(),
                names.join(" ")
            );
        }
    }
    out
}
