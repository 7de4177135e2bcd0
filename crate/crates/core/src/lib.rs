pub mod dma_sched;
pub mod ir;
pub mod layout_opt;
pub mod mapping;
pub mod parser;
pub mod sim;
pub mod synth;
pub mod typecheck;
pub mod vmg;
