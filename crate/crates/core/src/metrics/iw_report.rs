use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::data::{select_count, ManifestRow, SplitRole};
use crate::pipeline::IwRow;

pub const HIST_BINS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count_shortcut: usize,
    pub count_clean: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: f64,
    /// `(q, value)` pairs, linear interpolation between order statistics.
    pub quantiles: Vec<(f64, f64)>,
}

/// Composition of the `floor(q·n)` lowest-weight items.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BottomShare {
    pub q: f64,
    pub items: usize,
    /// Flagged items among the bottom set, over its size.
    pub flagged_share: f64,
    /// Flagged items among the bottom set, over all flagged items.
    pub flagged_recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IwReport {
    pub histogram: Vec<HistBin>,
    pub shortcut: GroupSummary,
    pub clean: GroupSummary,
    pub bottom: Vec<BottomShare>,
}

const QUANTILES: [f64; 7] = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0];
const BOTTOM_Q: [f64; 3] = [0.1, 0.2, 0.3];

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn summary(mut w: Vec<f64>) -> GroupSummary {
    w.sort_by(f64::total_cmp);
    let mean = if w.is_empty() {
        f64::NAN
    } else {
        w.iter().sum::<f64>() / w.len() as f64
    };
    GroupSummary {
        count: w.len(),
        mean,
        quantiles: QUANTILES.iter().map(|&q| (q, quantile(&w, q))).collect(),
    }
}

/// Histogram and tail composition of importance weights, split by whether
/// the training item carries a shortcut. Flags come from the manifest's
/// training rows, joined on source index.
pub fn iw_distribution_report(rows: &[IwRow], manifest: &[ManifestRow]) -> Result<IwReport, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Invalid("no importance weights".into()));
    }
    let train: HashMap<u32, bool> = manifest
        .iter()
        .filter(|m| m.split_role == SplitRole::Train.as_str())
        .map(|m| (m.source_index, m.shortcut_flag))
        .collect();
    if train.len() != rows.len() {
        return Err(MetricsError::IndexMismatch(format!(
            "{} weights but {} training rows in the manifest",
            rows.len(),
            train.len()
        )));
    }
    let mut flags = Vec::with_capacity(rows.len());
    for r in rows {
        if !(0.0..=1.0).contains(&r.weight) {
            return Err(MetricsError::Invalid(format!(
                "weight {} of index {} outside [0,1]",
                r.weight, r.index
            )));
        }
        match train.get(&r.index) {
            Some(&f) => flags.push(f),
            None => {
                return Err(MetricsError::IndexMismatch(format!(
                    "index {} is not a training item of the manifest",
                    r.index
                )))
            }
        }
    }

    let mut histogram: Vec<HistBin> = (0..HIST_BINS)
        .map(|b| HistBin {
            bin_low: b as f64 / HIST_BINS as f64,
            bin_high: (b + 1) as f64 / HIST_BINS as f64,
            count_shortcut: 0,
            count_clean: 0,
        })
        .collect();
    for (r, &f) in rows.iter().zip(&flags) {
        let b = ((r.weight * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
        if f {
            histogram[b].count_shortcut += 1;
        } else {
            histogram[b].count_clean += 1;
        }
    }

    let pick = |want: bool| -> Vec<f64> {
        rows.iter()
            .zip(&flags)
            .filter(|(_, &f)| f == want)
            .map(|(r, _)| r.weight)
            .collect()
    };

    // ascending weight, ties by index
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .weight
            .total_cmp(&rows[b].weight)
            .then(rows[a].index.cmp(&rows[b].index))
    });
    let total_flagged = flags.iter().filter(|&&f| f).count();
    let bottom = BOTTOM_Q
        .iter()
        .map(|&q| {
            let items = select_count(q, rows.len());
            let flagged = order[..items].iter().filter(|&&i| flags[i]).count();
            BottomShare {
                q,
                items,
                flagged_share: if items == 0 { 0.0 } else { flagged as f64 / items as f64 },
                flagged_recall: if total_flagged == 0 {
                    0.0
                } else {
                    flagged as f64 / total_flagged as f64
                },
            }
        })
        .collect();

    Ok(IwReport {
        histogram,
        shortcut: summary(pick(true)),
        clean: summary(pick(false)),
        bottom,
    })
}

impl IwReport {
    pub fn write_histogram_csv(&self, path: &std::path::Path) -> Result<(), MetricsError> {
        let mut w = csv::Writer::from_path(path)?;
        for b in &self.histogram {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_histogram_csv(path: &std::path::Path) -> Result<Vec<HistBin>, MetricsError> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<Result<_, _>>()?)
    }

    pub fn bottom_share(&self, q: f64) -> Option<&BottomShare> {
        self.bottom.iter().find(|b| (b.q - q).abs() < 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(weights: &[f64], flags: &[bool]) -> (Vec<IwRow>, Vec<ManifestRow>) {
        let rows = weights
            .iter()
            .zip(flags)
            .enumerate()
            .map(|(i, (&w, &f))| IwRow {
                index: i as u32 * 3,
                class: (i % 2) as u8,
                shortcut_flag: f,
                weight: w,
            })
            .collect();
        let manifest = flags
            .iter()
            .enumerate()
            .map(|(i, &f)| ManifestRow {
                source_index: i as u32 * 3,
                class: (i % 2) as u8,
                split_role: "train".into(),
                shortcut_flag: f,
            })
            .collect();
        (rows, manifest)
    }

    #[test]
    fn all_zero_weights_fill_first_bin() {
        let (rows, m) = table(
            &[0.0; 10],
            &[true, false, false, true, false, false, false, false, false, false],
        );
        let r = iw_distribution_report(&rows, &m).unwrap();
        assert_eq!(r.histogram.len(), 50);
        assert_eq!((r.histogram[0].count_shortcut, r.histogram[0].count_clean), (2, 8));
        assert!(r.histogram[1..].iter().all(|b| b.count_shortcut + b.count_clean == 0));
        assert_eq!(r.shortcut.count + r.clean.count, 10);
    }

    #[test]
    fn separated_groups() {
        let flags: Vec<bool> = (0..100).map(|i| i % 10 < 3).collect();
        let weights: Vec<f64> = flags.iter().map(|&f| if f { 0.01 } else { 0.9 }).collect();
        let (rows, m) = table(&weights, &flags);
        let r = iw_distribution_report(&rows, &m).unwrap();
        let shares: Vec<f64> = r.bottom.iter().map(|b| b.flagged_share).collect();
        assert_eq!(shares, vec![1.0, 1.0, 1.0]);
        assert!(shares.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.bottom_share(0.3).unwrap().flagged_recall, 1.0);
        assert!((r.bottom_share(0.1).unwrap().flagged_recall - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.histogram[45].count_clean, 70);
    }

    #[test]
    fn mismatch_and_empty() {
        let (rows, mut m) = table(&[0.5, 0.5], &[false, true]);
        m[1].source_index = 99;
        assert!(matches!(
            iw_distribution_report(&rows, &m),
            Err(MetricsError::IndexMismatch(_))
        ));
        assert!(iw_distribution_report(&[], &m).is_err());
    }

    #[test]
    fn histogram_csv_round_trip() {
        let (rows, m) = table(&[0.1, 0.7, 1.0], &[true, false, false]);
        let r = iw_distribution_report(&rows, &m).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        r.write_histogram_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p)
            .unwrap()
            .starts_with("bin_low,bin_high,count_shortcut,count_clean\n"));
        assert_eq!(IwReport::read_histogram_csv(&p).unwrap(), r.histogram);
    }
}
