//! Test accuracies, logit-scale benefit scores, importance-weight
//! diagnostics and multi-run aggregation.

mod aggregate;
mod iw_report;

pub use aggregate::{aggregate_runs, write_aggregate_csv, AggregateRow, MetricSummary, METRIC_NAMES};
pub use iw_report::{iw_distribution_report, BottomShare, GroupSummary, HistBin, IwReport, HIST_BINS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PreparedSplit;
use crate::nn::{predict_logits, ModelError, ModelParams, ModelSpec};
use crate::tensor::Tensor;

/// Version of the result JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Items per inference batch.
pub const EVAL_BATCH: usize = 250;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{0}")]
    Invalid(String),
    #[error("index mismatch: {0}")]
    IndexMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Ordinary,
    LcnIw,
    HcnIw,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Ordinary, Condition::LcnIw, Condition::HcnIw];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Ordinary => "ordinary",
            Condition::LcnIw => "lcn_iw",
            Condition::HcnIw => "hcn_iw",
        }
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy_from_logits(logits: &Tensor<f32>, labels: &[usize]) -> f64 {
    let k = logits.shape()[1];
    let correct = logits
        .data()
        .chunks_exact(k)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// Logits of every item, in split order.
pub fn split_logits(spec: &ModelSpec, params: &ModelParams, split: &PreparedSplit) -> Result<Tensor<f32>, ModelError> {
    let k = spec.num_classes();
    let mut out = Vec::with_capacity(split.len() * k);
    let mut start = 0;
    while start < split.len() {
        let end = (start + EVAL_BATCH).min(split.len());
        let (x, _) = split.range(start, end);
        out.extend_from_slice(predict_logits(spec, params, x)?.data());
        start = end;
    }
    Ok(Tensor::new(vec![split.len(), k], out)?)
}

pub fn accuracy(spec: &ModelSpec, params: &ModelParams, split: &PreparedSplit) -> Result<f64, MetricsError> {
    if split.is_empty() {
        return Err(MetricsError::Invalid("accuracy of an empty split".into()));
    }
    Ok(accuracy_from_logits(&split_logits(spec, params, split)?, &split.labels))
}

/// `ln(p̂ / (1 − p̂))` with `p̂ = clamp(p, 1/(2n), 1 − 1/(2n))` for a test
/// set of `n` items.
pub fn logit(p: f64, n: usize) -> f64 {
    let eps = 1.0 / (2.0 * n.max(1) as f64);
    let p = p.clamp(eps, 1.0 - eps);
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCounts {
    pub congruent: usize,
    pub incongruent: usize,
    pub neutral: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub condition: Condition,
    pub run: u64,
    pub acc_congruent: f64,
    pub acc_incongruent: f64,
    pub acc_neutral: f64,
    pub counts: SetCounts,
}

/// Gain, loss and their sum, in logit units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObResult {
    #[serde(rename = "G")]
    pub gain: f64,
    #[serde(rename = "L")]
    pub loss: f64,
    #[serde(rename = "OB")]
    pub overall: f64,
}

impl ObResult {
    pub const ZERO: ObResult = ObResult {
        gain: 0.0,
        loss: 0.0,
        overall: 0.0,
    };
}

/// Benefit of `iw` over `ordinary`: logit differences on the incongruent
/// (gain) and neutral (loss) sets.
pub fn overall_benefit(iw: &EvalResult, ordinary: &EvalResult) -> ObResult {
    let gain =
        logit(iw.acc_incongruent, iw.counts.incongruent) - logit(ordinary.acc_incongruent, ordinary.counts.incongruent);
    let loss = logit(iw.acc_neutral, iw.counts.neutral) - logit(ordinary.acc_neutral, ordinary.counts.neutral);
    ObResult {
        gain,
        loss,
        overall: gain + loss,
    }
}

/// One emitted result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub pair: [u8; 2],
    pub shortcut_kind: String,
    pub condition: Condition,
    pub run: u64,
    pub acc_congruent: f64,
    pub acc_incongruent: f64,
    pub acc_neutral: f64,
    pub counts: SetCounts,
    #[serde(rename = "G")]
    pub gain: f64,
    #[serde(rename = "L")]
    pub loss: f64,
    #[serde(rename = "OB")]
    pub overall: f64,
}

impl ResultRecord {
    pub fn new(pair: [u8; 2], shortcut_kind: &str, eval: &EvalResult, ob: ObResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            pair,
            shortcut_kind: shortcut_kind.to_string(),
            condition: eval.condition,
            run: eval.run,
            acc_congruent: eval.acc_congruent,
            acc_incongruent: eval.acc_incongruent,
            acc_neutral: eval.acc_neutral,
            counts: eval.counts,
            gain: ob.gain,
            loss: ob.loss,
            overall: ob.overall,
        }
    }
}
