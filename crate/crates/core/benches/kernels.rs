//! Sequential against data-parallel kernels: a conv layer forward/backward
//! and a full vgg-mini training step on a 64-image batch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shortcut_prior::exec::{set_exec_mode, ExecMode};
use shortcut_prior::nn::{build_hcn, forward, glorot_init, register_params};
use shortcut_prior::tensor::{Tape, Tensor};

const BATCH: usize = 64;

fn input(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i * 7919) % 255) as f32 / 127.5 - 1.0)
}

fn modes() -> [(&'static str, ExecMode); 2] {
    [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)]
}

fn conv_layer(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3_32to64_fwd_bwd");
    let x = input(&[BATCH, 32, 16, 16]);
    let k = input(&[64, 32, 3, 3]).map(|v| v * 0.05);
    let b = Tensor::zeros(&[64]);
    for (name, mode) in modes() {
        set_exec_mode(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let kv = tape.param(k.clone());
                let bv = tape.param(b.clone());
                let y = tape.conv2d(xv, kv, bv, 1, 1).unwrap();
                let s = tape.sum(y).unwrap();
                tape.backward(s).unwrap();
                black_box(tape.grad(kv).map(|g| g.data()[0]))
            })
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("vgg_mini_step");
    group.sample_size(10);
    let spec = build_hcn("vgg-mini", 2).unwrap();
    let params = glorot_init(&spec, 0).unwrap();
    let x = input(&[BATCH, 3, 32, 32]);
    let labels: Vec<usize> = (0..BATCH).map(|i| i % 2).collect();
    for (name, mode) in modes() {
        set_exec_mode(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let vars = register_params(&mut tape, &params, true);
                let xv = tape.constant(x.clone());
                let logits = forward(&mut tape, &spec, &vars, xv).unwrap();
                let losses = tape.softmax_cross_entropy(logits, &labels).unwrap();
                let loss = tape.sum(losses).unwrap();
                tape.backward(loss).unwrap();
                black_box(tape.value(loss).item())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv_layer, training_step);
criterion_main!(benches);
