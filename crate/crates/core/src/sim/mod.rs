//! Functional and cycle-approximate simulation.
//!
//! Every shot runs as a Kahn process. A tile multiplexes the shots of its
//! node cooperatively: it runs the earliest shot that can make progress.
//! Channels are bounded FIFOs of their declared depth, so any schedule of
//! a checker-accepted program completes with the same outputs.

mod inputs;
mod interp;
mod oracle;
mod runtime;
pub mod value;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ir::{ElemType, FabricConfig};

pub use inputs::{lcg_inputs, Lcg};
pub use interp::{Action, AllReduceMode, EvalError, Port, TaskProc};
pub use oracle::oracle_reference;
pub use runtime::{detect_deadlock, estimate, run_functional, run_timed, select_best, simulate};
pub use value::{Data, TensorValue};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub macs_per_cycle: BTreeMap<ElemType, u64>,
    pub eltwise_elems_per_cycle: u64,
    pub fifo_elems_per_cycle: u64,
    /// Post-chain internal buffers and combine nodes.
    pub internal_elems_per_cycle: u64,
    pub dma_elems_per_cycle_per_port: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            macs_per_cycle: BTreeMap::from([
                (ElemType::I4, 128),
                (ElemType::I8, 64),
                (ElemType::I16, 32),
                (ElemType::Bf16, 32),
                (ElemType::I32, 16),
                (ElemType::F32, 16),
            ]),
            eltwise_elems_per_cycle: 1,
            fifo_elems_per_cycle: 4,
            internal_elems_per_cycle: 1,
            dma_elems_per_cycle_per_port: 4,
        }
    }
}

impl CostModel {
    pub fn matmul_cycles(&self, elem: ElemType, macs: u64) -> u64 {
        macs.div_ceil(self.macs_per_cycle.get(&elem).copied().unwrap_or(16).max(1))
    }

    pub fn eltwise_cycles(&self, n: usize) -> u64 {
        (n as u64).div_ceil(self.eltwise_elems_per_cycle.max(1))
    }

    pub fn fifo_cycles(&self, n: usize) -> u64 {
        (n as u64).div_ceil(self.fifo_elems_per_cycle.max(1))
    }

    pub fn internal_cycles(&self, n: usize) -> u64 {
        (n as u64).div_ceil(self.internal_elems_per_cycle.max(1))
    }

    pub fn dma_cycles(&self, n: usize) -> u64 {
        (n as u64).div_ceil(self.dma_elems_per_cycle_per_port.max(1))
    }

    pub fn is_valid(&self) -> bool {
        self.macs_per_cycle.values().all(|&r| r >= 1)
            && self.eltwise_elems_per_cycle >= 1
            && self.fifo_elems_per_cycle >= 1
            && self.internal_elems_per_cycle >= 1
            && self.dma_elems_per_cycle_per_port >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub fabric: FabricConfig,
    pub cost: CostModel,
    /// Skip data computation; only shapes and timing are tracked.
    pub phantom: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let fabric = FabricConfig::default();
        let cost = CostModel {
            dma_elems_per_cycle_per_port: fabric.dma_bandwidth,
            ..CostModel::default()
        };
        Self {
            fabric,
            cost,
            phantom: false,
        }
    }
}

impl SimConfig {
    pub fn for_fabric(fabric: &FabricConfig) -> Self {
        let mut c = Self::default();
        c.cost.dma_elems_per_cycle_per_port = fabric.dma_bandwidth;
        c.fabric = fabric.clone();
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub tile: (usize, usize),
    pub shot: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub events: Vec<TraceEvent>,
    pub cycles: u64,
    /// Busy cycles per tile, keyed `"r,c"`.
    pub tile_busy: BTreeMap<String, u64>,
    /// Peak occupancy per channel label.
    pub fifo_peaks: BTreeMap<String, usize>,
    pub mac_cycles: u64,
    pub active_tiles: usize,
    pub utilization: f64,
}

impl SimTrace {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "cycles: {}\nutilization: {:.2}%\nactive tiles: {}\n",
            self.cycles,
            self.utilization * 100.0,
            self.active_tiles
        );
        for (ch, p) in &self.fifo_peaks {
            s.push_str(&format!("fifo {ch}: peak {p}\n"));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cycle,tile,shot,kind\n");
        for e in &self.events {
            s.push_str(&format!(
                "{},{}:{},{},{}\n",
                e.cycle, e.tile.0, e.tile.1, e.shot, e.kind
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub outputs: BTreeMap<String, TensorValue>,
    pub trace: SimTrace,
}

/// One blocked process: `shot` waits to `op` on `channel`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockedOn {
    pub shot: String,
    pub op: String,
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[error("simulation deadlock at cycle {cycle}: {}", describe(blocked, wait_cycle))]
pub struct SimDeadlock {
    pub cycle: u64,
    pub blocked: Vec<BlockedOn>,
    /// Processes forming the wait-for cycle, empty when the blocked
    /// processes wait on finished ones.
    pub wait_cycle: Vec<String>,
    /// Channels along the wait-for cycle.
    pub cycle_channels: Vec<String>,
}

fn describe(blocked: &[BlockedOn], cycle: &[String]) -> String {
    if cycle.is_empty() {
        let b: Vec<String> = blocked
            .iter()
            .map(|b| format!("{} {} {}", b.shot, b.op, b.channel))
            .collect();
        format!("blocked: {}", b.join(", "))
    } else {
        format!("wait cycle {}", cycle.join(" -> "))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Deadlock(#[from] SimDeadlock),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("input `{0}`: {1}")]
    Input(String, String),
    #[error("cannot build graph: {0}")]
    Build(String),
    #[error("no candidate could be placed on the fabric")]
    NoPlaceable,
}

#[cfg(test)]
mod tests;
