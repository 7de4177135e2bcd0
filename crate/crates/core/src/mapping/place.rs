use std::collections::BTreeMap;

use serde::Serialize;

use super::Primitive;
use crate::ir::FabricConfig;
use crate::vmg::{NodeId, Vmg};

pub type Tile = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhysicalMapping {
    #[serde(skip)]
    pub vmg: Vmg,
    pub applied: Vec<Primitive>,
    pub assignment: BTreeMap<NodeId, Tile>,
    pub fabric: FabricConfig,
    pub estimated_cycles: Option<u64>,
}

impl PhysicalMapping {
    pub fn tile_of(&self, n: NodeId) -> Tile {
        self.assignment[&n]
    }

    /// Row-major tile index.
    pub fn tile_index(&self, t: Tile) -> usize {
        t.0 * self.fabric.cols + t.1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{nodes} nodes do not fit on a {rows}x{cols} fabric")]
pub struct PlacementError {
    pub nodes: usize,
    pub rows: usize,
    pub cols: usize,
}

/// Assigns nodes to tiles row-major, walking topological layers in order.
pub fn place(g: &Vmg, applied: &[Primitive], fabric: &FabricConfig) -> Result<PhysicalMapping, PlacementError> {
    if g.node_count() > fabric.tiles() {
        return Err(PlacementError {
            nodes: g.node_count(),
            rows: fabric.rows,
            cols: fabric.cols,
        });
    }
    let mut assignment = BTreeMap::new();
    let mut i = 0;
    for layer in g.topo_layers() {
        for n in layer {
            assignment.insert(n, (i / fabric.cols, i % fabric.cols));
            i += 1;
        }
    }
    Ok(PhysicalMapping {
        vmg: g.clone(),
        applied: applied.to_vec(),
        assignment,
        fabric: fabric.clone(),
        estimated_cycles: None,
    })
}
