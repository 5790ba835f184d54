//! Model construction, initialization, optimization and checkpoints.

mod checkpoint;
mod model;
mod optim;
mod spec;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointFile};
pub use model::{forward, glorot_init, predict_logits, register_params, ModelParams};
pub use optim::{LrSchedule, Sgd, SgdConfig};
pub use spec::{build_hcn, build_lcn, model_by_name, ActShape, Activation, Layer, ModelSpec, ParamInfo, HCN_PRESETS};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    Invalid(String),
    #[error("unknown model preset {name:?}; known presets: {known}")]
    UnknownPreset { name: String, known: String },
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("invalid optimizer settings: {0}")]
    Optimizer(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
