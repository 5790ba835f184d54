//! The data-parallel path must reproduce the sequential path bit for bit.
//! The execution mode is process-wide, so this binary holds a single test.

use shortcut_prior::data::synthetic::generate;
use shortcut_prior::data::{ChannelStats, DatasetSplit, PreparedSplit, SplitRole};
use shortcut_prior::exec::{set_exec_mode, ExecMode};
use shortcut_prior::nn::{build_hcn, glorot_init, ModelParams};
use shortcut_prior::pipeline::{train_model, CheckpointMetric, TrainConfig};

fn train_once() -> (ModelParams, Vec<u64>) {
    let records: Vec<_> = generate(8, 5, 3)
        .into_iter()
        .map(|mut r| {
            r.label %= 2;
            r
        })
        .collect();
    let split = DatasetSplit::clean(SplitRole::Train, records[..60].to_vec());
    let val = DatasetSplit::clean(SplitRole::Validation, records[60..].to_vec());
    let stats = ChannelStats::from_records(&split.records);
    let spec = build_hcn("vgg-mini", 2).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        initial_lr: 0.01,
        momentum: 0.9,
        weight_decay: 5e-4,
        batch_size: 37,
        init_seed: 1,
        batch_seed: 2,
        checkpoint_metric: CheckpointMetric::ValAccuracy,
    };
    let weights: Vec<f64> = (0..60).map(|i| (i % 5) as f64 / 4.0).collect();
    let out = train_model(
        &spec,
        glorot_init(&spec, 1).unwrap(),
        &cfg,
        &PreparedSplit::new(&split, &stats),
        &PreparedSplit::new(&val, &stats),
        Some(&weights),
    )
    .unwrap();
    let losses = out.history.iter().map(|h| h.train_loss.to_bits()).collect();
    (out.best.params, losses)
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_and_sequential_training_agree_bitwise() {
    set_exec_mode(ExecMode::Sequential);
    let seq_data = generate(3, 9, 1);
    let seq = train_once();
    // several workers even on a single-core host
    rayon::ThreadPoolBuilder::new().num_threads(4).build_global().unwrap();
    set_exec_mode(ExecMode::Parallel);
    let par_data = generate(3, 9, 1);
    let par = train_once();
    assert_eq!(seq_data, par_data);
    assert_eq!(seq.1, par.1);
    for (a, b) in seq.0.tensors().iter().zip(par.0.tensors()) {
        let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
}
