//! Block Hadamard high-rank adapters and their baselines (LoRA, HiRA, ABBA)
//! on dense `f64` matrices: forward and merge paths, closed-form gradients,
//! spectral diagnostics, cost accounting and a toy teacher-student harness.

pub mod adapters;
pub mod cost;
pub mod counting;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod matrix;
pub mod spectral;
pub mod verify;

pub use adapters::{
    AdapterConfig, AdapterKind, AdapterState, BlockFactors, BlockGrid, Checkpoint, FrozenWeight,
};
pub use error::{BhraError, Result};
pub use matrix::Matrix;
pub use spectral::SpectralReport;
