//! Checkpoint archive.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "SPCKPT01"
//! hlen     u64 LE   length of the header
//! header   hlen     canonical JSON: spec, epoch, metric, tensor manifest
//! payload           f32 little-endian buffers at the manifest offsets
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams, ModelSpec};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SPCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: ModelSpec,
    epoch: usize,
    metric: f64,
    tensors: Vec<TensorEntry>,
}

/// Everything stored in a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointFile {
    pub spec: ModelSpec,
    pub params: ModelParams,
    pub epoch: usize,
    pub metric: f64,
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &CheckpointFile) -> Result<(), ModelError> {
    let mut offset = 0u64;
    let tensors = ckpt
        .params
        .names()
        .iter()
        .zip(ckpt.params.tensors())
        .map(|(name, t)| {
            let len = (t.len() * 4) as u64;
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                dtype: "f32le".into(),
                offset,
                len,
            };
            offset += len;
            e
        })
        .collect();
    let header = Header {
        format_version: 1,
        spec: ckpt.spec.clone(),
        epoch: ckpt.epoch,
        metric: ckpt.metric,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for t in ckpt.params.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<CheckpointFile, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let hlen = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    if header.format_version != 1 {
        return Err(ModelError::Format(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != "f32le" {
            return Err(ModelError::Format(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let (start, end) = (e.offset as usize, (e.offset + e.len) as usize);
        let bytes = payload
            .get(start..end)
            .ok_or_else(|| ModelError::Format(format!("{}: payload truncated", e.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(Tensor::new(e.shape.clone(), data)?);
    }
    let params = ModelParams::new(&header.spec, tensors)?;
    if params.names().iter().zip(&header.tensors).any(|(a, e)| *a != e.name) {
        return Err(ModelError::Format("tensor names do not match the spec".into()));
    }
    Ok(CheckpointFile {
        spec: header.spec,
        params,
        epoch: header.epoch,
        metric: header.metric,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &CheckpointFile) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointFile, ModelError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_hcn, glorot_init};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = build_hcn("vgg-mini", 2).unwrap();
        let mut params = glorot_init(&spec, 9).unwrap();
        // include awkward values: negative zero, subnormal
        params.tensors_mut()[1].data_mut()[0] = -0.0;
        params.tensors_mut()[1].data_mut()[1] = f32::from_bits(1);
        let ckpt = CheckpointFile {
            spec,
            params,
            epoch: 3,
            metric: 0.123456789012345,
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.epoch, 3);
        assert_eq!(back.metric.to_bits(), ckpt.metric.to_bits());
        for (a, b) in back.params.tensors().iter().zip(ckpt.params.tensors()) {
            let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn truncated_payload_rejected() {
        let spec = build_hcn("vgg-mini", 2).unwrap();
        let ckpt = CheckpointFile {
            params: glorot_init(&spec, 1).unwrap(),
            spec,
            epoch: 0,
            metric: 0.5,
        };
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        buf.truncate(buf.len() - 4);
        assert!(read_checkpoint(buf.as_slice()).is_err());
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
    }
}
