use serde::{Deserialize, Serialize};

/// Physical fabric parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FabricConfig {
    pub rows: usize,
    pub cols: usize,
    pub ports_in_per_tile: usize,
    pub ports_out_per_tile: usize,
    pub fifo_default_depth: usize,
    /// Elements per cycle per DMA port.
    pub dma_bandwidth: u64,
    pub local_mem_bytes: usize,
    /// DMA split boundaries must fall on multiples of this many elements.
    pub burst_alignment: usize,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 5,
            ports_in_per_tile: 2,
            ports_out_per_tile: 2,
            fifo_default_depth: 2,
            dma_bandwidth: 4,
            local_mem_bytes: 64 * 1024,
            burst_alignment: 32,
        }
    }
}

impl FabricConfig {
    pub fn with_tiles(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            ..Self::default()
        }
    }

    pub fn tiles(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_valid(&self) -> bool {
        self.rows * self.cols >= 1
            && self.ports_in_per_tile >= 1
            && self.ports_out_per_tile >= 1
            && self.fifo_default_depth >= 1
            && self.dma_bandwidth >= 1
    }
}
