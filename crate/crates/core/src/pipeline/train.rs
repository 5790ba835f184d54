use serde::{Deserialize, Serialize};

use super::{weighted_batch_loss, PipelineError};
use crate::data::{make_batches, PreparedSplit};
use crate::metrics::{accuracy_from_logits, split_logits};
use crate::nn::{forward, register_params, LrSchedule, ModelParams, ModelSpec, Sgd, SgdConfig};
use crate::seeds::derive_seed;
use crate::tensor::{Tape, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMetric {
    ValAccuracy,
    ValLoss,
}

/// Hyperparameters and seeds of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub init_seed: u64,
    pub batch_seed: u64,
    pub checkpoint_metric: CheckpointMetric,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 {
            return Err(PipelineError::Invalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(PipelineError::Invalid("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            schedule: LrSchedule::step_50_75(self.initial_lr),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// Parameters selected on validation data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub epoch: usize,
    pub metric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the optimized (weighted) batch loss, weighted by
    /// batch size.
    pub train_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Validation accuracy and mean unweighted cross-entropy.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, split: &PreparedSplit) -> Result<(f64, f64), PipelineError> {
    let logits = split_logits(spec, params, split)?;
    let k = spec.num_classes();
    let loss: f64 = logits
        .data()
        .chunks_exact(k)
        .zip(&split.labels)
        .map(|(z, &y)| -super::iw::true_class_probability(z, y).max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / split.len() as f64;
    Ok((accuracy_from_logits(&logits, &split.labels), loss))
}

/// Mini-batch SGD from `params`. With `weights` every batch loss is the
/// normalized weighted sum of per-item losses; without, all weights are one,
/// which is the plain batch mean. The best validation epoch is kept (ties go
/// to the earlier epoch).
pub fn train_model(
    spec: &ModelSpec,
    mut params: ModelParams,
    config: &TrainConfig,
    train: &PreparedSplit,
    val: &PreparedSplit,
    weights: Option<&[f64]>,
) -> Result<TrainOutcome, PipelineError> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(PipelineError::Invalid("empty train or validation split".into()));
    }
    let ones;
    let weights = match weights {
        Some(w) if w.len() != train.len() => {
            return Err(PipelineError::Invalid(format!(
                "{} importance weights for {} training items",
                w.len(),
                train.len()
            )))
        }
        Some(w) => w,
        None => {
            ones = vec![1.0; train.len()];
            &ones
        }
    };

    let mut opt = Sgd::new(config.sgd(), &params)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;
    for epoch in 0..config.epochs {
        let batches = make_batches(
            train.len(),
            config.batch_size,
            derive_seed(config.batch_seed, epoch as u64, 0),
        );
        let mut loss_sum = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let diag = |e: TensorError| PipelineError::NonFiniteLoss {
                epoch,
                batch: b,
                detail: e.to_string(),
            };
            let (x, labels) = train.batch(idx);
            let w: Vec<f64> = idx.iter().map(|&i| weights[i]).collect();
            let mut tape = Tape::new();
            let vars = register_params(&mut tape, &params, true);
            let x = tape.constant(x);
            let logits = forward(&mut tape, spec, &vars, x).map_err(|e| match e {
                crate::nn::ModelError::Tensor(t) => diag(t),
                other => other.into(),
            })?;
            let losses = tape.softmax_cross_entropy(logits, &labels).map_err(diag)?;
            let loss = weighted_batch_loss(&mut tape, losses, &w)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(PipelineError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!("loss {value}"),
                });
            }
            tape.backward(loss).map_err(diag)?;
            let grads: Vec<_> = vars
                .iter()
                .map(|&v| tape.grad(v).cloned().expect("parameters receive gradients"))
                .collect();
            opt.step(&mut params, &grads, epoch, config.epochs)?;
            loss_sum += value * idx.len() as f64;
        }
        let (acc, vloss) = evaluate(spec, &params, val)?;
        let metric = match config.checkpoint_metric {
            CheckpointMetric::ValAccuracy => acc,
            CheckpointMetric::ValLoss => vloss,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_metric: metric,
            lr: opt.lr(epoch, config.epochs),
        });
        let better = match &best {
            None => true,
            Some(b) => match config.checkpoint_metric {
                CheckpointMetric::ValAccuracy => metric > b.metric,
                CheckpointMetric::ValLoss => metric < b.metric,
            },
        };
        if better {
            best = Some(Checkpoint {
                params: params.clone(),
                epoch,
                metric,
            });
        }
        log::debug!(
            "epoch {epoch}: train loss {:.4}, val {:.4}",
            loss_sum / train.len() as f64,
            metric
        );
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch"),
        history,
    })
}

pub fn write_history_csv(path: &std::path::Path, history: &[EpochRecord]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path)?;
    for h in history {
        w.serialize(h)?;
    }
    w.flush()?;
    Ok(())
}
