//! Dataset ingestion and controlled shortcut injection.

mod batches;
mod cifar;
mod manifest;
mod normalize;
mod shortcut;
mod split;
pub mod synthetic;

pub use batches::make_batches;
pub use cifar::{
    load_cifar, load_cifar_dir, parse_cifar, write_cifar, CifarDataset, ImageRecord, CIFAR_CLASSES, IMAGE_BYTES,
    RECORD_BYTES, TEST_FILE, TRAIN_FILES,
};
pub use manifest::{manifest_rows, read_manifest, write_manifest, ManifestRow};
pub use normalize::{normalize_for_model, ChannelStats, PreparedSplit};
pub use shortcut::{
    apply_pattern, build_test_sets, inject, inject_global, inject_local, make_gaussian_masks, select_count,
    GaussianMasks, LocalLine, ShortcutKind, ShortcutPattern, ShortcutSpec, TestSets,
};
pub use split::{make_pair_splits, DatasetSplit, PairSizes, PairSplits, SplitRole};
pub use synthetic::write_synthetic_cifar;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: length {actual} is not a multiple of {expected} bytes")]
    BadLength {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: record {record} has label {label} > 9")]
    BadLabel { path: String, record: usize, label: u8 },
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("missing records: {0}")]
    MissingRecords(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
