use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::PreparedSplit;
use crate::metrics::split_logits;
use crate::nn::{ModelParams, ModelSpec};
use crate::tensor::{Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Producer {
    Lcn,
    Hcn,
}

/// One line of an importance-weight file.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IwRow {
    /// Source index of the training image.
    pub index: u32,
    /// Original class id.
    pub class: u8,
    pub shortcut_flag: bool,
    #[serde(serialize_with = "sig9")]
    pub weight: f64,
}

fn sig9<S: serde::Serializer>(w: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_sig9(*w))
}

/// Decimal rendering with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (8 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Importance weights of every training item, in training-split order.
#[derive(Clone, Debug, PartialEq)]
pub struct IwTable {
    pub producer: Producer,
    /// Identifies the checkpoint the weights came from.
    pub producer_checkpoint: String,
    pub rows: Vec<IwRow>,
}

impl IwTable {
    pub fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.weight).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_iw_rows(path: &Path) -> Result<Vec<IwRow>, PipelineError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: Vec<IwRow> = r.deserialize().collect::<Result<_, _>>()?;
    let mut seen = std::collections::HashSet::new();
    for row in &rows {
        if !(0.0..=1.0).contains(&row.weight) {
            return Err(PipelineError::Invalid(format!(
                "{}: weight {} of index {} outside [0,1]",
                path.display(),
                row.weight,
                row.index
            )));
        }
        if !seen.insert(row.index) {
            return Err(PipelineError::Invalid(format!(
                "{}: index {} repeated",
                path.display(),
                row.index
            )));
        }
    }
    Ok(rows)
}

/// `w̃_j = w_j / Σ_k w_k`.
pub fn normalize_batch_iws(raw: &[f64]) -> Result<Vec<f64>, PipelineError> {
    if let Some((i, &w)) = raw.iter().enumerate().find(|(_, w)| !(**w >= 0.0 && w.is_finite())) {
        return Err(PipelineError::NegativeWeight { position: i, value: w });
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(PipelineError::ZeroWeightSum);
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// `Σ_k w̃_k · L_k` over per-item losses; the weights are constants. A batch
/// whose weights are all zero falls back to uniform weights with a warning.
pub fn weighted_batch_loss<T: Scalar>(tape: &mut Tape<T>, losses: Var, weights: &[f64]) -> Result<Var, PipelineError> {
    let normalized = match normalize_batch_iws(weights) {
        Ok(w) => w,
        Err(PipelineError::ZeroWeightSum) => {
            log::warn!(
                "all {} weights of a batch are zero; using uniform weights",
                weights.len()
            );
            vec![1.0 / weights.len() as f64; weights.len()]
        }
        Err(e) => return Err(e),
    };
    let w: Vec<T> = normalized.into_iter().map(T::from_f64).collect();
    Ok(tape.dot_const(losses, &w)?)
}

/// `w_i = 1 − p(y_i | x_i)` under the given model, for every training item
/// in split order. `class_pair` maps remapped labels back to class ids.
pub fn compute_iws(
    spec: &ModelSpec,
    params: &ModelParams,
    train: &PreparedSplit,
    class_pair: [u8; 2],
    producer: Producer,
    producer_checkpoint: &str,
) -> Result<IwTable, PipelineError> {
    let logits = split_logits(spec, params, train)?;
    let k = spec.num_classes();
    let rows = logits
        .data()
        .chunks_exact(k)
        .enumerate()
        .map(|(i, z)| {
            let y = train.labels[i];
            let p = true_class_probability(z, y);
            IwRow {
                index: train.source_indices[i],
                class: class_pair[y],
                shortcut_flag: train.shortcut_flags[i],
                weight: (1.0 - p).clamp(0.0, 1.0),
            }
        })
        .collect();
    Ok(IwTable {
        producer,
        producer_checkpoint: producer_checkpoint.to_string(),
        rows,
    })
}

/// Softmax probability of class `y`, evaluated in f64.
pub fn true_class_probability(logits: &[f32], y: usize) -> f64 {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
    let denom: f64 = logits.iter().map(|&v| (v as f64 - m).exp()).sum();
    (logits[y] as f64 - m).exp() / denom
}
