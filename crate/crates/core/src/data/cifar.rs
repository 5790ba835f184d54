use std::path::Path;

use super::DataError;

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";
pub const CIFAR_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// One 3×32×32 image, channel-major (1024 red, 1024 green, 1024 blue bytes,
/// each row-major).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub pixels: Box<[u8; IMAGE_BYTES]>,
    pub label: u8,
    /// Position in the source files (train batches are numbered
    /// consecutively across the five files).
    pub source_index: u32,
}

impl ImageRecord {
    pub fn new(pixels: &[u8], label: u8, source_index: u32) -> Self {
        let mut buf = Box::new([0u8; IMAGE_BYTES]);
        buf.copy_from_slice(pixels);
        Self {
            pixels: buf,
            label,
            source_index,
        }
    }
}

/// Parse CIFAR-10 binary records; `first_index` numbers the first record.
pub fn parse_cifar(bytes: &[u8], first_index: u32, path: &str) -> Result<Vec<ImageRecord>, DataError> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(DataError::BadLength {
            path: path.to_string(),
            expected: RECORD_BYTES,
            actual: bytes.len(),
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(i, rec)| {
            if rec[0] > 9 {
                return Err(DataError::BadLabel {
                    path: path.to_string(),
                    record: i,
                    label: rec[0],
                });
            }
            Ok(ImageRecord::new(&rec[1..], rec[0], first_index + i as u32))
        })
        .collect()
}

pub fn load_cifar(path: &Path) -> Result<Vec<ImageRecord>, DataError> {
    load_numbered(path, 0)
}

fn load_numbered(path: &Path, first_index: u32) -> Result<Vec<ImageRecord>, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    parse_cifar(&bytes, first_index, &path.display().to_string())
}

pub fn write_cifar(path: &Path, records: &[ImageRecord]) -> Result<(), DataError> {
    let mut buf = Vec::with_capacity(records.len() * RECORD_BYTES);
    for r in records {
        buf.push(r.label);
        buf.extend_from_slice(&r.pixels[..]);
    }
    std::fs::write(path, buf)?;
    Ok(())
}

/// The five training batches and the test batch.
#[derive(Clone, Debug)]
pub struct CifarDataset {
    pub train: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
}

/// Load `data_batch_{1..5}.bin` and `test_batch.bin` from `dir` (or from its
/// `cifar-10-batches-bin` subdirectory, as unpacked from the archive).
pub fn load_cifar_dir(dir: &Path) -> Result<CifarDataset, DataError> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if !dir.join(TEST_FILE).is_file() && nested.join(TEST_FILE).is_file() {
        nested
    } else {
        dir.to_path_buf()
    };
    let mut train = Vec::new();
    for name in TRAIN_FILES {
        let first = train.len() as u32;
        train.extend(load_numbered(&dir.join(name), first)?);
    }
    let test = load_numbered(&dir.join(TEST_FILE), 0)?;
    Ok(CifarDataset { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| {
                let px: Vec<u8> = (0..IMAGE_BYTES).map(|j| ((i * 31 + j * 7) % 256) as u8).collect();
                ImageRecord::new(&px, (i % 10) as u8, i as u32)
            })
            .collect()
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bin");
        let recs = records(25);
        write_cifar(&path, &recs).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 25 * 3073);
        assert_eq!(load_cifar(&path).unwrap(), recs);
    }

    #[test]
    fn channel_major_layout() {
        let mut bytes = vec![0u8; RECORD_BYTES];
        bytes[0] = 3;
        bytes[1] = 10; // red (0,0)
        bytes[1 + 1024] = 20; // green (0,0)
        bytes[1 + 2048 + 33] = 30; // blue (1,1)
        let r = &parse_cifar(&bytes, 0, "mem").unwrap()[0];
        assert_eq!(r.label, 3);
        assert_eq!((r.pixels[0], r.pixels[1024], r.pixels[2048 + 32 + 1]), (10, 20, 30));
    }

    #[test]
    fn truncated_and_bad_label() {
        let err = parse_cifar(&[0u8; 3072], 0, "t").unwrap_err();
        assert!(matches!(
            err,
            DataError::BadLength {
                expected: 3073,
                actual: 3072,
                ..
            }
        ));
        let mut bytes = vec![0u8; RECORD_BYTES * 2];
        bytes[RECORD_BYTES] = 10;
        assert!(matches!(
            parse_cifar(&bytes, 0, "t").unwrap_err(),
            DataError::BadLabel {
                record: 1,
                label: 10,
                ..
            }
        ));
    }

    #[test]
    fn missing_dir_reports_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_cifar_dir(dir.path()), Err(DataError::MissingFile(_))));
    }
}
