//! Two-stage training: a low-capacity network scores every training item,
//! its misclassification probabilities become importance weights, and the
//! target network is trained on the normalized weighted loss.

mod config;
mod experiment;
mod iw;
mod train;

pub use config::{DeskScale, Effective, ExperimentConfig, ShortcutConfig, StageConfig};
pub use experiment::{
    build_pair_data, result_path, run_condition, run_experiment, run_one, ConditionOutcome, ExperimentOutput,
    ModelCache, PairData, RunOutput, TrainedModel,
};
pub use iw::{
    compute_iws, format_sig9, normalize_batch_iws, read_iw_rows, true_class_probability, weighted_batch_loss, IwRow,
    IwTable, Producer,
};
pub use train::{
    evaluate, train_model, write_history_csv, Checkpoint, CheckpointMetric, EpochRecord, TrainConfig, TrainOutcome,
};

use std::fmt;

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::nn::ModelError;
use crate::tensor::TensorError;

/// A configuration problem tied to one field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join_fields(errs: &[FieldError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {}", join_fields(.0))]
    Config(Vec<FieldError>),
    #[error("non-finite value at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("negative or non-finite importance weight {value} at batch position {position}")]
    NegativeWeight { position: usize, value: f64 },
    #[error("importance weights of the batch sum to zero")]
    ZeroWeightSum,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
