//! ECM (Execution-Cache-Memory) predictions for specialized kernels.

mod characterize;
mod model;

pub use characterize::{characterize, KernelCharacterization, StreamedArray};
pub use model::{ecm_multicore, ecm_single, saturation_cycles, EcmPrediction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EcmError {
    #[error("machine {machine} has no throughput for {class}")]
    MissingThroughput { machine: String, class: String },
    #[error("kernel {kernel} references undeclared array `{array}`")]
    UndeclaredArray { kernel: String, array: String },
    #[error("kernel {kernel} has a symbolic loop bound")]
    SymbolicN { kernel: String },
    #[error("{tau} cores requested but the machine has {cores}")]
    Cores { tau: u32, cores: u32 },
    #[error("residency: {0}")]
    Residency(String),
}
