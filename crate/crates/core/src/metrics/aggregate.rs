use std::collections::BTreeMap;

use serde::Serialize;

use super::{Condition, MetricsError, ResultRecord};

pub const METRIC_NAMES: [&str; 6] = ["acc_congruent", "acc_incongruent", "acc_neutral", "G", "L", "OB"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub pair: [u8; 2],
    pub shortcut_kind: String,
    pub condition: Condition,
    pub n_runs: usize,
    /// In [`METRIC_NAMES`] order.
    pub metrics: Vec<MetricSummary>,
}

impl AggregateRow {
    pub fn metric(&self, name: &str) -> Option<MetricSummary> {
        METRIC_NAMES.iter().position(|&n| n == name).map(|i| self.metrics[i])
    }
}

fn values(r: &ResultRecord) -> [f64; 6] {
    [
        r.acc_congruent,
        r.acc_incongruent,
        r.acc_neutral,
        r.gain,
        r.loss,
        r.overall,
    ]
}

/// Mean and sample standard deviation (0 for a single value). Values are
/// sorted before summation so the result does not depend on input order.
fn summarize(mut v: Vec<f64>) -> MetricSummary {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 {
        0.0
    } else {
        let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
        dev.sort_by(f64::total_cmp);
        (dev.iter().sum::<f64>() / (n - 1.0)).sqrt()
    };
    MetricSummary { mean, std }
}

/// Group by `(pair, shortcut kind, condition)` and summarize every metric.
pub fn aggregate_runs(results: &[ResultRecord]) -> Result<Vec<AggregateRow>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Invalid("no results to aggregate".into()));
    }
    let first = results[0].schema_version;
    if let Some(r) = results.iter().find(|r| r.schema_version != first) {
        return Err(MetricsError::Invalid(format!(
            "mixed schema versions {first} and {}",
            r.schema_version
        )));
    }
    let mut groups: BTreeMap<([u8; 2], String, Condition), Vec<&ResultRecord>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.pair, r.shortcut_kind.clone(), r.condition))
            .or_default()
            .push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((pair, kind, condition), rs)| AggregateRow {
            pair,
            shortcut_kind: kind,
            condition,
            n_runs: rs.len(),
            metrics: (0..METRIC_NAMES.len())
                .map(|m| summarize(rs.iter().map(|r| values(r)[m]).collect()))
                .collect(),
        })
        .collect())
}

pub fn write_aggregate_csv<W: std::io::Write>(out: W, rows: &[AggregateRow]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "pair".to_string(),
        "shortcut_kind".into(),
        "condition".into(),
        "n_runs".into(),
    ];
    for m in METRIC_NAMES {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            format!("{}-{}", r.pair[0], r.pair[1]),
            r.shortcut_kind.clone(),
            r.condition.as_str().to_string(),
            r.n_runs.to_string(),
        ];
        for s in &r.metrics {
            rec.push(s.mean.to_string());
            rec.push(s.std.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
