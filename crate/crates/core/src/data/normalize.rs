use serde::{Deserialize, Serialize};

use super::{DatasetSplit, ImageRecord, SplitRole, IMAGE_BYTES};
use crate::tensor::Tensor;

const PLANE: usize = 32 * 32;

/// Per-channel mean and (population) standard deviation in [0,1] units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn from_records(records: &[ImageRecord]) -> Self {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        for r in records {
            for c in 0..3 {
                for &b in &r.pixels[c * PLANE..(c + 1) * PLANE] {
                    let v = b as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (records.len() * PLANE).max(1) as f64;
        let mut mean = [0.0; 3];
        let mut std = [1.0; 3];
        for c in 0..3 {
            mean[c] = sum[c] / n;
            let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
            // a constant channel keeps unit scale instead of dividing by zero
            std[c] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }
}

fn standardize_into(pixels: &[u8; IMAGE_BYTES], stats: &ChannelStats, out: &mut [f32]) {
    for c in 0..3 {
        let (m, s) = (stats.mean[c], stats.std[c]);
        for (o, &b) in out[c * PLANE..(c + 1) * PLANE]
            .iter_mut()
            .zip(&pixels[c * PLANE..(c + 1) * PLANE])
        {
            *o = ((b as f64 / 255.0 - m) / s) as f32;
        }
    }
}

/// `(byte/255 − mean_c) / std_c` as a `[3,32,32]` tensor.
pub fn normalize_for_model(pixels: &[u8; IMAGE_BYTES], stats: &ChannelStats) -> Tensor<f32> {
    let mut data = vec![0f32; IMAGE_BYTES];
    standardize_into(pixels, stats, &mut data);
    Tensor::new(vec![3, 32, 32], data).expect("fixed image shape")
}

/// A split converted once to standardized floats for training or evaluation.
#[derive(Clone, Debug)]
pub struct PreparedSplit {
    pub role: SplitRole,
    images: Vec<f32>,
    pub labels: Vec<usize>,
    pub shortcut_flags: Vec<bool>,
    pub source_indices: Vec<u32>,
}

impl PreparedSplit {
    pub fn new(split: &DatasetSplit, stats: &ChannelStats) -> Self {
        let mut images = vec![0f32; split.len() * IMAGE_BYTES];
        for (r, out) in split.records.iter().zip(images.chunks_exact_mut(IMAGE_BYTES)) {
            standardize_into(&r.pixels, stats, out);
        }
        Self {
            role: split.role,
            images,
            labels: split.labels(),
            shortcut_flags: split.shortcut_flags.clone(),
            source_indices: split.records.iter().map(|r| r.source_index).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    /// Gather items into an `[n,3,32,32]` tensor plus their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * IMAGE_BYTES);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        let t = Tensor::new(vec![indices.len(), 3, 32, 32], data).expect("batch shape");
        (t, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Contiguous items `start..end`.
    pub fn range(&self, start: usize, end: usize) -> (Tensor<f32>, Vec<usize>) {
        let t = Tensor::new(
            vec![end - start, 3, 32, 32],
            self.images[start * IMAGE_BYTES..end * IMAGE_BYTES].to_vec(),
        )
        .expect("batch shape");
        (t, self.labels[start..end].to_vec())
    }
}
