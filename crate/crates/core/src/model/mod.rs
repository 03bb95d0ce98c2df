//! The MeshNet architecture over the tensor tape.

mod config;
mod count;
mod layers;
mod net;

use thiserror::Error;

use crate::tensor::{CheckpointError, TensorError};

pub use config::{Ablation, Aggregation, BlockWidths, ModelConfig};
pub use count::{param_count, param_report, ModuleCount, ParamReport, REFERENCE_PARAMS};
pub use layers::{BnUpdate, Pass};
pub use net::{FaceBatch, ForwardOutput, MeshNet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model config: {0}")]
    Config(String),
    #[error("batch: {0}")]
    Batch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
