use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{CheckpointMetric, FieldError, PipelineError};
use crate::data::{LocalLine, PairSizes, ShortcutKind};
use crate::metrics::Condition;
use crate::nn::{model_by_name, HCN_PRESETS};

/// Injected shortcut settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortcutConfig {
    pub kind: ShortcutKind,
    #[serde(default = "default_prevalence")]
    pub prevalence: f64,
    /// Mask variance in [0,1] intensity units (global shortcuts).
    #[serde(default = "default_variance")]
    pub variance: f64,
    /// Line placement and colors (local shortcuts).
    #[serde(default)]
    pub line: LocalLine,
}

fn default_prevalence() -> f64 {
    0.3
}

fn default_variance() -> f64 {
    25e-4
}

/// Training settings of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    /// `lcn` or an HCN preset name.
    pub model: String,
    pub epochs: usize,
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    #[serde(default = "default_metric")]
    pub checkpoint_metric: CheckpointMetric,
}

fn default_metric() -> CheckpointMetric {
    CheckpointMetric::ValAccuracy
}

impl StageConfig {
    pub fn lcn_default() -> Self {
        Self {
            model: "lcn".into(),
            epochs: 40,
            initial_lr: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
            batch_size: 256,
            checkpoint_metric: CheckpointMetric::ValAccuracy,
        }
    }

    pub fn hcn_default() -> Self {
        Self {
            model: "vgg11".into(),
            epochs: 150,
            initial_lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 256,
            checkpoint_metric: CheckpointMetric::ValAccuracy,
        }
    }
}

/// Reduced sizes applied when `desk_scale` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskScale {
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub hcn_model: String,
    pub hcn_epochs: usize,
    pub lcn_epochs: usize,
}

impl Default for DeskScale {
    fn default() -> Self {
        Self {
            train_per_class: 2000,
            val_per_class: 250,
            hcn_model: "vgg-mini".into(),
            hcn_epochs: 20,
            lcn_epochs: 15,
        }
    }
}

/// One experiment: a class pair, a shortcut, the conditions to compare and
/// the number of seeded runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    pub class_pair: [u8; 2],
    pub shortcut: ShortcutConfig,
    #[serde(default = "StageConfig::lcn_default")]
    pub lcn: StageConfig,
    #[serde(default = "StageConfig::hcn_default")]
    pub hcn: StageConfig,
    #[serde(default = "all_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default = "one")]
    pub num_runs: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub desk_scale: bool,
    #[serde(default)]
    pub desk: DeskScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Runs executed concurrently.
    #[serde(default = "one_usize")]
    pub jobs: usize,
}

fn all_conditions() -> Vec<Condition> {
    Condition::ALL.to_vec()
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

/// Settings after applying the desk-scale overrides.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Effective {
    pub sizes: PairSizes,
    pub lcn: StageConfig,
    pub hcn: StageConfig,
    /// Conditions in execution order (ordinary first).
    pub conditions: Vec<Condition>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| {
            PipelineError::Config(vec![FieldError {
                field: "<document>".into(),
                message: e.to_string(),
            }])
        })
    }

    /// Canonical JSON: keys sorted, two-space indentation, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn effective(&self) -> Effective {
        let (mut lcn, mut hcn) = (self.lcn.clone(), self.hcn.clone());
        let sizes = if self.desk_scale {
            lcn.epochs = self.desk.lcn_epochs;
            hcn.epochs = self.desk.hcn_epochs;
            hcn.model = self.desk.hcn_model.clone();
            PairSizes {
                train_per_class: self.desk.train_per_class,
                val_per_class: self.desk.val_per_class,
            }
        } else {
            PairSizes::FULL
        };
        let mut conditions = self.conditions.clone();
        conditions.sort();
        Effective {
            sizes,
            lcn,
            hcn,
            conditions,
        }
    }

    /// Every violated precondition, each naming its field.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut errs = Vec::new();
        let mut err = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.into(),
                message,
            })
        };
        let [a, b] = self.class_pair;
        if a > 9 || b > 9 || a == b {
            err(
                "class_pair",
                format!("need two distinct class ids in 0..=9, got [{a}, {b}]"),
            );
        }
        let s = &self.shortcut;
        if !(0.0..=1.0).contains(&s.prevalence) {
            err("shortcut.prevalence", format!("must be in [0,1], got {}", s.prevalence));
        }
        if !(s.variance >= 0.0 && s.variance.is_finite()) {
            err(
                "shortcut.variance",
                format!("must be a finite value >= 0, got {}", s.variance),
            );
        }
        let l = &s.line;
        if l.length == 0 || l.row >= 32 || l.col_start + l.length > 32 {
            err("shortcut.line", "line must lie inside the 32x32 image".into());
        }
        for (name, stage, want_lcn) in [("lcn", &self.lcn, true), ("hcn", &self.hcn, false)] {
            if want_lcn && stage.model != "lcn" {
                err(
                    &format!("{name}.model"),
                    format!("must be \"lcn\", got {:?}", stage.model),
                );
            }
            if !want_lcn && !HCN_PRESETS.contains(&stage.model.as_str()) {
                err(
                    &format!("{name}.model"),
                    format!("unknown preset {:?}; known: {}", stage.model, HCN_PRESETS.join(", ")),
                );
            }
            if stage.epochs == 0 {
                err(&format!("{name}.epochs"), "must be >= 1".into());
            }
            if !(stage.initial_lr > 0.0 && stage.initial_lr.is_finite()) {
                err(
                    &format!("{name}.initial_lr"),
                    format!("must be > 0, got {}", stage.initial_lr),
                );
            }
            if !(0.0..1.0).contains(&stage.momentum) {
                err(
                    &format!("{name}.momentum"),
                    format!("must be in [0,1), got {}", stage.momentum),
                );
            }
            if !(stage.weight_decay >= 0.0 && stage.weight_decay.is_finite()) {
                err(
                    &format!("{name}.weight_decay"),
                    format!("must be >= 0, got {}", stage.weight_decay),
                );
            }
            if stage.batch_size == 0 {
                err(&format!("{name}.batch_size"), "must be >= 1".into());
            }
        }
        if self.conditions.is_empty() {
            err("conditions", "at least one condition is required".into());
        }
        let mut seen = self.conditions.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.conditions.len() {
            err("conditions", "conditions must not repeat".into());
        }
        if seen.iter().any(|&c| c != Condition::Ordinary) && !seen.contains(&Condition::Ordinary) {
            err(
                "conditions",
                "weighted conditions are scored against \"ordinary\", which must be included".into(),
            );
        }
        if self.num_runs == 0 {
            err("num_runs", "must be >= 1".into());
        }
        if self.jobs == 0 {
            err("jobs", "must be >= 1".into());
        }
        if self.desk_scale {
            let d = &self.desk;
            if d.train_per_class == 0 || d.val_per_class == 0 {
                err("desk", "split sizes must be positive".into());
            }
            if d.train_per_class + d.val_per_class > 5000 {
                err("desk", "train + validation per class cannot exceed 5000".into());
            }
            if !HCN_PRESETS.contains(&d.hcn_model.as_str()) {
                err("desk.hcn_model", format!("unknown preset {:?}", d.hcn_model));
            }
            if d.hcn_epochs == 0 || d.lcn_epochs == 0 {
                err("desk", "epochs must be >= 1".into());
            }
        }
        if errs.is_empty() {
            // spec construction is the final authority on model names
            if let Err(e) = model_by_name(&self.effective().hcn.model, 2) {
                errs.push(FieldError {
                    field: "hcn.model".into(),
                    message: e.to_string(),
                });
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(errs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{"class_pair": [1, 6], "shortcut": {"kind": "local"}}"#
    }

    #[test]
    fn defaults_follow_full_protocol() {
        let c = ExperimentConfig::from_json(minimal()).unwrap();
        c.validate().unwrap();
        assert_eq!(c.lcn, StageConfig::lcn_default());
        assert_eq!(c.hcn.model, "vgg11");
        assert_eq!(c.shortcut.prevalence, 0.3);
        let e = c.effective();
        assert_eq!(e.sizes, PairSizes::FULL);
        assert_eq!(e.hcn.epochs, 150);
    }

    #[test]
    fn desk_scale_overrides() {
        let mut c = ExperimentConfig::from_json(minimal()).unwrap();
        c.desk_scale = true;
        let e = c.effective();
        assert_eq!(e.sizes, PairSizes::DESK);
        assert_eq!((e.hcn.model.as_str(), e.hcn.epochs, e.lcn.epochs), ("vgg-mini", 20, 15));
    }

    #[test]
    fn field_level_errors() {
        let mut c = ExperimentConfig::from_json(minimal()).unwrap();
        c.shortcut.prevalence = 1.5;
        c.lcn.batch_size = 0;
        c.conditions = vec![Condition::LcnIw];
        let PipelineError::Config(errs) = c.validate().unwrap_err() else {
            panic!("expected config error")
        };
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, vec!["shortcut.prevalence", "lcn.batch_size", "conditions"]);
    }

    #[test]
    fn unknown_field_rejected() {
        let err =
            ExperimentConfig::from_json(r#"{"class_pair":[1,6],"shortcut":{"kind":"local"},"epochs":3}"#).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
    }

    #[test]
    fn canonical_json_round_trips() {
        let c = ExperimentConfig::from_json(minimal()).unwrap();
        let text = c.to_canonical_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_canonical_json(), text);
    }
}
