//! Analytic gradients against 64-bit central differences, 10 seeded points
//! per operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shortcut_prior::tensor::{grad_check, Tape, Tensor, TensorError, Var};

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;
const POINTS: u64 = 10;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values whose magnitude stays clear of the relu kink.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn check<F>(name: &str, point: impl Fn(&mut ChaCha8Rng) -> Tensor<f64>, f: F)
where
    F: Fn(&mut Tape<f64>, Var, &mut ChaCha8Rng) -> Result<Var, TensorError>,
{
    for seed in 0..POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p = point(&mut rng);
        // constants of the program are drawn from a fixed generator so every
        // evaluation sees the same ones
        let err = grad_check(
            |t, x| {
                let mut crng = ChaCha8Rng::seed_from_u64(seed);
                f(t, x, &mut crng)
            },
            &p,
            STEP,
        )
        .unwrap();
        assert!(err < TOL, "{name}, point {seed}: relative error {err}");
    }
}

/// Reduce any tensor to a scalar with fixed random weights so that every
/// output coordinate matters.
fn project(t: &mut Tape<f64>, v: Var, rng: &mut ChaCha8Rng) -> Result<Var, TensorError> {
    let n = t.value(v).len();
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    t.dot_const(v, &w)
}

#[test]
fn conv2d_wrt_input_kernels_bias() {
    // input
    check(
        "conv2d/input",
        |r| random(&[2, 3, 5, 5], r),
        |t, x, r| {
            let k = t.constant(random(&[4, 3, 3, 3], r));
            let b = t.constant(random(&[4], r));
            let y = t.conv2d(x, k, b, 1, 1)?;
            project(t, y, r)
        },
    );
    // kernels, strided
    check(
        "conv2d/kernels",
        |r| random(&[2, 3, 3, 3], r),
        |t, k, r| {
            let x = t.constant(random(&[2, 3, 7, 7], r));
            let b = t.constant(random(&[2], r));
            let y = t.conv2d(x, k, b, 0, 2)?;
            project(t, y, r)
        },
    );
    check(
        "conv2d/bias",
        |r| random(&[3], r),
        |t, b, r| {
            let x = t.constant(random(&[1, 2, 4, 4], r));
            let k = t.constant(random(&[3, 2, 3, 3], r));
            let y = t.conv2d(x, k, b, 1, 1)?;
            project(t, y, r)
        },
    );
}

#[test]
fn affine_wrt_all_arguments() {
    check(
        "affine/input",
        |r| random(&[3, 5], r),
        |t, x, r| {
            let w = t.constant(random(&[5, 4], r));
            let b = t.constant(random(&[4], r));
            let y = t.affine(x, w, b)?;
            project(t, y, r)
        },
    );
    check(
        "affine/weights",
        |r| random(&[5, 4], r),
        |t, w, r| {
            let x = t.constant(random(&[3, 5], r));
            let b = t.constant(random(&[4], r));
            let y = t.affine(x, w, b)?;
            project(t, y, r)
        },
    );
    check(
        "affine/bias",
        |r| random(&[4], r),
        |t, b, r| {
            let x = t.constant(random(&[3, 5], r));
            let w = t.constant(random(&[5, 4], r));
            let y = t.affine(x, w, b)?;
            project(t, y, r)
        },
    );
}

#[test]
fn relu_composites() {
    check(
        "relu",
        |r| away_from_zero(&[4, 6], r),
        |t, x, r| {
            let y = t.relu(x)?;
            project(t, y, r)
        },
    );
    // |x·w1| < 4, so biases of ±5 keep every pre-activation off the kink
    check(
        "affine-relu-affine",
        |r| random(&[3, 4], r),
        |t, x, r| {
            let w1 = t.constant(random(&[4, 6], r));
            let b1 = t.constant(Tensor::from_fn(&[6], |i| if i % 2 == 0 { 5.0 } else { -5.0 }));
            let h = t.affine(x, w1, b1)?;
            let a = t.relu(h)?;
            let w2 = t.constant(random(&[6, 2], r));
            let b2 = t.constant(random(&[2], r));
            let y = t.affine(a, w2, b2)?;
            project(t, y, r)
        },
    );
}

#[test]
fn softmax_cross_entropy_wrt_logits() {
    check(
        "softmax_xent",
        |r| random(&[4, 3], r).map(|v| 3.0 * v),
        |t, z, _| {
            let l = t.softmax_cross_entropy(z, &[0, 2, 1, 2])?;
            t.sum(l)
        },
    );
}

#[test]
fn conv_affine_softmax_composite() {
    check(
        "conv-affine-xent",
        |r| random(&[2, 2, 4, 4], r),
        |t, x, r| {
            let k = t.constant(random(&[3, 2, 3, 3], r));
            let b = t.constant(random(&[3], r));
            let c = t.conv2d(x, k, b, 1, 1)?;
            let f = t.flatten(c)?;
            let w = t.constant(random(&[48, 2], r).map(|v| 0.3 * v));
            let bb = t.constant(random(&[2], r));
            let z = t.affine(f, w, bb)?;
            let l = t.softmax_cross_entropy(z, &[1, 0])?;
            t.sum(l)
        },
    );
}

#[test]
fn max_pool_and_elementwise() {
    // distinct values keep the argmax stable under the step
    check(
        "max_pool",
        |r| {
            let mut v: Vec<f64> = (0..2 * 2 * 4 * 4).map(|i| i as f64 * 0.01).collect();
            use rand::seq::SliceRandom;
            v.shuffle(r);
            Tensor::new(vec![2, 2, 4, 4], v).unwrap()
        },
        |t, x, r| {
            let y = t.max_pool2d(x, 2, 2)?;
            project(t, y, r)
        },
    );
    check(
        "mul",
        |r| random(&[5], r),
        |t, x, r| {
            let c = t.constant(random(&[5], r));
            let y = t.mul(x, c)?;
            let z = t.mul(y, x)?;
            project(t, z, r)
        },
    );
    check(
        "add-scale-sum",
        |r| random(&[2, 3], r),
        |t, x, r| {
            let c = t.constant(random(&[2, 3], r));
            let y = t.add(x, c)?;
            let y = t.add(y, x)?;
            let y = t.scale(y, -1.7)?;
            let sq = t.mul(y, y)?;
            t.sum(sq)
        },
    );
    check(
        "reshape",
        |r| random(&[2, 6], r),
        |t, x, r| {
            let y = t.reshape(x, &[3, 4])?;
            let y = t.mul(y, y)?;
            project(t, y, r)
        },
    );
}
