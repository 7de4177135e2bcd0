//! Program representation, semantic types, kernel contracts and fabric
//! parameters shared by every pass.

mod diag;
mod fabric;
mod kernel;
mod types;
mod validate;

pub use diag::{Diagnostic, Severity};
pub use fabric::FabricConfig;
pub use kernel::{
    Binding, CostHint, DimPattern, KernelContract, KernelError, KernelHandle, KernelQuery, KernelRegistry,
    LatencyModel, OperandLayout, ShapePattern,
};
pub use types::*;
pub use validate::{validate_program, validate_program_with};
