use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, DatasetSplit, ImageRecord, SplitRole, IMAGE_BYTES};
use crate::seeds::derive_seed;

const PLANE: usize = 32 * 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortcutKind {
    Local,
    Global,
}

impl ShortcutKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShortcutKind::Local => "local",
            ShortcutKind::Global => "global",
        }
    }
}

/// A short horizontal line of a per-class color.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalLine {
    /// RGB bytes for class 0 and class 1.
    pub colors: [[u8; 3]; 2],
    pub row: usize,
    pub col_start: usize,
    pub length: usize,
}

impl Default for LocalLine {
    /// Red for class 0, blue for class 1, at row 1, columns 1–3.
    fn default() -> Self {
        Self {
            colors: [[255, 0, 0], [0, 0, 255]],
            row: 1,
            col_start: 1,
            length: 3,
        }
    }
}

/// One additive noise mask per class, in [0,1] intensity units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMasks {
    pub variance: f64,
    pub mask_seed: u64,
    pub masks: [Vec<f64>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ShortcutPattern {
    Local(LocalLine),
    Global(GaussianMasks),
}

impl ShortcutPattern {
    pub fn kind(&self) -> ShortcutKind {
        match self {
            ShortcutPattern::Local(_) => ShortcutKind::Local,
            ShortcutPattern::Global(_) => ShortcutKind::Global,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortcutSpec {
    pub pattern: ShortcutPattern,
    /// Fraction of each class's images that receive the shortcut.
    pub prevalence: f64,
    pub injection_seed: u64,
}

impl ShortcutSpec {
    pub fn local(prevalence: f64, injection_seed: u64) -> Result<Self, DataError> {
        Self::checked(ShortcutPattern::Local(LocalLine::default()), prevalence, injection_seed)
    }

    pub fn global(variance: f64, mask_seed: u64, prevalence: f64, injection_seed: u64) -> Result<Self, DataError> {
        let masks = make_gaussian_masks(variance, mask_seed)?;
        Self::checked(ShortcutPattern::Global(masks), prevalence, injection_seed)
    }

    fn checked(pattern: ShortcutPattern, prevalence: f64, injection_seed: u64) -> Result<Self, DataError> {
        let spec = Self {
            pattern,
            prevalence,
            injection_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn kind(&self) -> ShortcutKind {
        self.pattern.kind()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.prevalence) {
            return Err(DataError::Invalid(format!(
                "prevalence must be in [0,1], got {}",
                self.prevalence
            )));
        }
        match &self.pattern {
            ShortcutPattern::Local(l) => {
                if l.length == 0 || l.row >= 32 || l.col_start + l.length > 32 {
                    return Err(DataError::Invalid(format!(
                        "line at row {}, columns {}..{} is outside the 32x32 image",
                        l.row,
                        l.col_start,
                        l.col_start + l.length
                    )));
                }
            }
            ShortcutPattern::Global(g) => {
                if g.masks
                    .iter()
                    .any(|m| m.len() != IMAGE_BYTES || m.iter().any(|v| !v.is_finite()))
                {
                    return Err(DataError::Invalid("each mask needs 3072 finite values".into()));
                }
            }
        }
        Ok(())
    }
}

/// Two independent masks of i.i.d. `Normal(0, variance)` values, the class-0
/// mask drawn first from a generator seeded with `mask_seed`.
pub fn make_gaussian_masks(variance: f64, mask_seed: u64) -> Result<GaussianMasks, DataError> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(DataError::Invalid(format!(
            "mask variance must be >= 0, got {variance}"
        )));
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| DataError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
    let mut draw = || (0..IMAGE_BYTES).map(|_| normal.sample(&mut rng)).collect::<Vec<f64>>();
    let m0 = draw();
    let m1 = draw();
    Ok(GaussianMasks {
        variance,
        mask_seed,
        masks: [m0, m1],
    })
}

/// Stamp the shortcut of `class` onto one image.
pub fn apply_pattern(pixels: &mut [u8; IMAGE_BYTES], pattern: &ShortcutPattern, class: usize) {
    match pattern {
        ShortcutPattern::Local(line) => {
            let color = line.colors[class];
            for (c, &byte) in color.iter().enumerate() {
                let start = c * PLANE + line.row * 32 + line.col_start;
                pixels[start..start + line.length].fill(byte);
            }
        }
        ShortcutPattern::Global(g) => {
            for (p, &m) in pixels.iter_mut().zip(&g.masks[class]) {
                let v = (*p as f64 / 255.0 + m).clamp(0.0, 1.0);
                *p = (255.0 * v).round() as u8;
            }
        }
    }
}

/// `floor(prevalence · n)`; the small epsilon keeps products such as
/// `0.3 · 4500` from landing one below the exact integer.
pub fn select_count(prevalence: f64, n: usize) -> usize {
    ((prevalence * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Inject `spec` into a seeded choice of `select_count(prevalence, n_class)`
/// images of each class. Selection is uniform within class and depends on
/// `(injection_seed, split role, class)` only.
pub fn inject(split: &DatasetSplit, spec: &ShortcutSpec) -> Result<DatasetSplit, DataError> {
    spec.validate()?;
    if let Some(r) = split.records.iter().find(|r| r.label > 1) {
        return Err(DataError::Invalid(format!(
            "injection needs labels in {{0,1}}, found {} (source index {})",
            r.label, r.source_index
        )));
    }
    let mut out = split.clone();
    out.shortcut_flags = vec![false; split.len()];
    for class in 0..2usize {
        let members: Vec<usize> = (0..split.len())
            .filter(|&i| split.records[i].label as usize == class)
            .collect();
        let k = select_count(spec.prevalence, members.len());
        let seed = derive_seed(spec.injection_seed, split.role.stream(), class as u64);
        let chosen = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), members.len(), k);
        for j in chosen {
            let i = members[j];
            apply_pattern(&mut out.records[i].pixels, &spec.pattern, class);
            out.shortcut_flags[i] = true;
        }
    }
    Ok(out)
}

pub fn inject_local(split: &DatasetSplit, spec: &ShortcutSpec) -> Result<DatasetSplit, DataError> {
    expect_kind(spec, ShortcutKind::Local)?;
    inject(split, spec)
}

pub fn inject_global(split: &DatasetSplit, spec: &ShortcutSpec) -> Result<DatasetSplit, DataError> {
    expect_kind(spec, ShortcutKind::Global)?;
    inject(split, spec)
}

fn expect_kind(spec: &ShortcutSpec, kind: ShortcutKind) -> Result<(), DataError> {
    if spec.kind() != kind {
        return Err(DataError::Invalid(format!(
            "expected a {} shortcut, got {}",
            kind.as_str(),
            spec.kind().as_str()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TestSets {
    pub congruent: DatasetSplit,
    pub incongruent: DatasetSplit,
    pub neutral: DatasetSplit,
}

/// Congruent: every image carries its own class's shortcut. Incongruent:
/// every image carries the other class's. Neutral: untouched copies.
pub fn build_test_sets(test: &[ImageRecord], spec: &ShortcutSpec) -> Result<TestSets, DataError> {
    spec.validate()?;
    if let Some(r) = test.iter().find(|r| r.label > 1) {
        return Err(DataError::Invalid(format!("test label {} is not in {{0,1}}", r.label)));
    }
    let stamped = |role: SplitRole, swap: bool| {
        let records = test
            .iter()
            .map(|r| {
                let mut r = r.clone();
                let class = r.label as usize ^ swap as usize;
                apply_pattern(&mut r.pixels, &spec.pattern, class);
                r
            })
            .collect::<Vec<_>>();
        DatasetSplit {
            role,
            shortcut_flags: vec![true; records.len()],
            records,
        }
    };
    Ok(TestSets {
        congruent: stamped(SplitRole::TestCongruent, false),
        incongruent: stamped(SplitRole::TestIncongruent, true),
        neutral: DatasetSplit::clean(SplitRole::TestNeutral, test.to_vec()),
    })
}
