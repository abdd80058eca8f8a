//! Cycle-level simulator for two-sided sparse CNN accelerators on a grid of
//! filter rows and input-map columns.

pub mod arch;
pub mod balance;
pub mod engine;
pub mod error;
pub mod interconnect;
pub mod presets;
pub mod tensor;

pub use arch::{ArchConfig, Features, Scale, Variant};
pub use engine::{simulate, Breakdown, SimOutput, SimReport, Workload};
pub use error::{Result, SimError};
pub use tensor::{ChunkSize, LayerSpec};
