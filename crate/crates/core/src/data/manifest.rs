use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, DatasetSplit};

/// One audited item: which original image, which class, where it went and
/// whether it carries an injected shortcut.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub source_index: u32,
    /// Original class id (0–9).
    pub class: u8,
    pub split_role: String,
    pub shortcut_flag: bool,
}

pub fn manifest_rows(split: &DatasetSplit, class_pair: [u8; 2]) -> Vec<ManifestRow> {
    split
        .records
        .iter()
        .zip(&split.shortcut_flags)
        .map(|(r, &f)| ManifestRow {
            source_index: r.source_index,
            class: class_pair[r.label as usize],
            split_role: split.role.as_str().to_string(),
            shortcut_flag: f,
        })
        .collect()
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
