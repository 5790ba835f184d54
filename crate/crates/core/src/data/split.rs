use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CifarDataset, DataError, ImageRecord};
use crate::seeds::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRole {
    Train,
    Validation,
    TestCongruent,
    TestIncongruent,
    TestNeutral,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Validation => "validation",
            SplitRole::TestCongruent => "test-congruent",
            SplitRole::TestIncongruent => "test-incongruent",
            SplitRole::TestNeutral => "test-neutral",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SplitRole::Train,
            SplitRole::Validation,
            SplitRole::TestCongruent,
            SplitRole::TestIncongruent,
            SplitRole::TestNeutral,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }

    pub(crate) fn stream(self) -> u64 {
        self as u64 + 1
    }
}

/// Records of one role with a per-record shortcut flag.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub records: Vec<ImageRecord>,
    pub shortcut_flags: Vec<bool>,
}

impl DatasetSplit {
    pub fn clean(role: SplitRole, records: Vec<ImageRecord>) -> Self {
        let shortcut_flags = vec![false; records.len()];
        Self {
            role,
            records,
            shortcut_flags,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label as usize).collect()
    }

    pub fn flagged_count(&self) -> usize {
        self.shortcut_flags.iter().filter(|&&f| f).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSizes {
    pub train_per_class: usize,
    pub val_per_class: usize,
}

impl PairSizes {
    pub const FULL: PairSizes = PairSizes {
        train_per_class: 4500,
        val_per_class: 500,
    };
    pub const DESK: PairSizes = PairSizes {
        train_per_class: 2000,
        val_per_class: 250,
    };
}

impl Default for PairSizes {
    fn default() -> Self {
        Self::FULL
    }
}

/// Two-class data with labels remapped so that `class_pair[0] → 0` and
/// `class_pair[1] → 1`.
#[derive(Clone, Debug)]
pub struct PairSplits {
    pub class_pair: [u8; 2],
    pub train: DatasetSplit,
    pub validation: DatasetSplit,
    pub test: Vec<ImageRecord>,
}

/// Per class, a seeded permutation of that class's training-source images
/// assigns the first `train_per_class` to train and the next `val_per_class`
/// to validation. Test keeps every test-source image of both classes.
/// Records are ordered class 0 first, then class 1.
pub fn make_pair_splits(
    data: &CifarDataset,
    class_a: u8,
    class_b: u8,
    split_seed: u64,
    sizes: PairSizes,
) -> Result<PairSplits, DataError> {
    if class_a == class_b || class_a > 9 || class_b > 9 {
        return Err(DataError::Invalid(format!(
            "class pair must be two distinct ids in 0..10, got ({class_a}, {class_b})"
        )));
    }
    if sizes.train_per_class == 0 || sizes.val_per_class == 0 {
        return Err(DataError::Invalid("split sizes must be positive".into()));
    }
    let need = sizes.train_per_class + sizes.val_per_class;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (new_label, class) in [class_a, class_b].into_iter().enumerate() {
        let mut pool: Vec<&ImageRecord> = data.train.iter().filter(|r| r.label == class).collect();
        if pool.len() < need {
            return Err(DataError::MissingRecords(format!(
                "class {class} has {} training-source images, {need} required",
                pool.len()
            )));
        }
        let class_test: Vec<&ImageRecord> = data.test.iter().filter(|r| r.label == class).collect();
        if class_test.is_empty() {
            return Err(DataError::MissingRecords(format!("class {class} has no test images")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(split_seed, 0, class as u64 + 1));
        pool.shuffle(&mut rng);
        let relabel = |r: &ImageRecord| ImageRecord {
            label: new_label as u8,
            ..r.clone()
        };
        train.extend(pool[..sizes.train_per_class].iter().map(|r| relabel(r)));
        val.extend(pool[sizes.train_per_class..need].iter().map(|r| relabel(r)));
        test.extend(class_test.into_iter().map(relabel));
    }
    Ok(PairSplits {
        class_pair: [class_a, class_b],
        train: DatasetSplit::clean(SplitRole::Train, train),
        validation: DatasetSplit::clean(SplitRole::Validation, val),
        test,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::data::IMAGE_BYTES;

    /// Tiny labelled dataset: `per_class` train and `test_per_class` test
    /// records per class with distinguishable pixels.
    pub(crate) fn toy_dataset(per_class: usize, test_per_class: usize) -> CifarDataset {
        let make = |n: usize| -> Vec<ImageRecord> {
            (0..n * 10)
                .map(|i| {
                    let px: Vec<u8> = (0..IMAGE_BYTES).map(|j| ((i * 13 + j * 5) % 251) as u8).collect();
                    ImageRecord::new(&px, (i % 10) as u8, i as u32)
                })
                .collect()
        };
        CifarDataset {
            train: make(per_class),
            test: make(test_per_class),
        }
    }

    #[test]
    fn full_sizes_partition_and_relabel() {
        let data = toy_dataset(5000, 1000);
        let s = make_pair_splits(&data, 1, 6, 7, PairSizes::FULL).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (9000, 1000, 2000));
        let tr: HashSet<u32> = s.train.records.iter().map(|r| r.source_index).collect();
        let va: HashSet<u32> = s.validation.records.iter().map(|r| r.source_index).collect();
        assert_eq!(tr.len(), 9000);
        assert!(tr.is_disjoint(&va));
        for r in s.train.records.iter().chain(&s.validation.records) {
            assert_eq!(data.train[r.source_index as usize].label, [1, 6][r.label as usize]);
        }
        for r in &s.test {
            assert_eq!(data.test[r.source_index as usize].label, [1, 6][r.label as usize]);
        }
        assert_eq!(s.train.records.iter().filter(|r| r.label == 0).count(), 4500);
    }

    #[test]
    fn deterministic_membership() {
        let data = toy_dataset(300, 10);
        let sizes = PairSizes {
            train_per_class: 200,
            val_per_class: 50,
        };
        let a = make_pair_splits(&data, 0, 2, 11, sizes).unwrap();
        let b = make_pair_splits(&data, 0, 2, 11, sizes).unwrap();
        let c = make_pair_splits(&data, 0, 2, 12, sizes).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.validation, b.validation);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn missing_records_and_bad_pair() {
        let data = toy_dataset(100, 10);
        assert!(matches!(
            make_pair_splits(&data, 0, 1, 0, PairSizes::FULL),
            Err(DataError::MissingRecords(_))
        ));
        assert!(matches!(
            make_pair_splits(&data, 3, 3, 0, PairSizes::DESK),
            Err(DataError::Invalid(_))
        ));
    }

    #[test]
    fn role_names_round_trip() {
        for r in [
            SplitRole::Train,
            SplitRole::Validation,
            SplitRole::TestCongruent,
            SplitRole::TestIncongruent,
            SplitRole::TestNeutral,
        ] {
            assert_eq!(SplitRole::parse(r.as_str()), Some(r));
        }
    }
}
