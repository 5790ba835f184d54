//! Training engine and experiment harness for importance-weighted training
//! against shortcut learning.
//!
//! A low-capacity network (LCN) is trained first; its per-item probability of
//! the true class `p` becomes the importance weight `w = 1 - p` of each
//! training item. A high-capacity network (HCN) is then trained on a
//! mini-batch-normalized weighted loss, so items the LCN could master (which
//! are the items carrying a shortcut) contribute little.
//!
//! Module map:
//!
//! - [`tensor`]: dense tensors and a tape-based reverse-mode autodiff engine.
//! - [`nn`]: model specs (LCN, VGG-style HCNs), Glorot init, SGD, checkpoints.
//! - [`data`]: CIFAR-10 ingestion, pair splits, shortcut injection, test sets.
//! - [`pipeline`]: training loop, importance weights, conditions, experiments.
//! - [`metrics`]: accuracies, Gain/Loss/Overall Benefit, IW diagnostics.
//! - [`exec`]: sequential / data-parallel execution switch.

pub mod data;
pub mod exec;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seeds;
pub mod tensor;

pub use tensor::{Scalar, Tape, Tensor, TensorError, Var};
