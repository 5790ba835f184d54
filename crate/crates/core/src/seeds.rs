//! Seed derivation.
//!
//! Every random stream in an experiment is derived from `(base_seed, run,
//! stream)` by a counter scheme:
//!
//! ```text
//! derive_seed(base, run, stream) = splitmix64(base ^ splitmix64((run << 16) | stream))
//! ```
//!
//! `stream` is one of the constants in [`Stream`]. Nested streams (per-epoch
//! batching, per-role injection) reuse the same construction with the parent
//! seed as `base`.

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, run: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64((run << 16) | (stream & 0xFFFF)))
}

/// Named random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Mask = 2,
    Injection = 3,
    LcnInit = 4,
    LcnBatches = 5,
    HcnInit = 6,
    HcnBatches = 7,
    HcnRetrainInit = 8,
}

/// All seeds used by one run of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunSeeds {
    pub split_seed: u64,
    pub mask_seed: u64,
    pub injection_seed: u64,
    pub lcn_init: u64,
    pub lcn_batches: u64,
    /// Init of the ordinarily trained HCN and of the LCN-IW target HCN.
    pub hcn_init: u64,
    pub hcn_batches: u64,
    /// Init of the HCN-IW target, which must differ from its producer.
    pub hcn_retrain_init: u64,
}

impl RunSeeds {
    pub fn derive(base_seed: u64, run: u64) -> Self {
        let s = |stream: Stream| derive_seed(base_seed, run, stream as u64);
        Self {
            split_seed: s(Stream::Split),
            mask_seed: s(Stream::Mask),
            injection_seed: s(Stream::Injection),
            lcn_init: s(Stream::LcnInit),
            lcn_batches: s(Stream::LcnBatches),
            hcn_init: s(Stream::HcnInit),
            hcn_batches: s(Stream::HcnBatches),
            hcn_retrain_init: s(Stream::HcnRetrainInit),
        }
    }
}
