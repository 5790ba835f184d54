//! Procedural stand-in for CIFAR-10 in the same binary layout.
//!
//! Each class is a geometric silhouette (square, disk, cross, ...) with a
//! surface texture, drawn at a random position, size, rotation and color
//! over a smooth random background with clutter strokes and pixel noise.
//! Silhouettes of paired classes have matching areas, object colors are only
//! weakly class dependent and texture phase is random, so a linear model gets
//! little beyond color statistics while a small CNN can learn shape and
//! texture. Useful where the real archive is unavailable.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_cifar, DataError, ImageRecord, IMAGE_BYTES, TEST_FILE, TRAIN_FILES};
use crate::seeds::derive_seed;

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;

/// Silhouette names in class-id order.
pub const SHAPES: [&str; 10] = [
    "triangle", "square", "ring", "diamond", "cross", "ellipse", "disk", "tee", "bowtie", "flower",
];

/// Typical object color per class, used for a share of the images so that
/// color carries weak class evidence, as in natural photographs.
const CLASS_COLORS: [[f64; 3]; 10] = [
    [0.60, 0.70, 0.85],
    [0.75, 0.25, 0.25],
    [0.55, 0.45, 0.30],
    [0.50, 0.40, 0.35],
    [0.55, 0.45, 0.25],
    [0.45, 0.35, 0.30],
    [0.35, 0.50, 0.25],
    [0.50, 0.35, 0.25],
    [0.40, 0.50, 0.65],
    [0.70, 0.70, 0.70],
];
const COLOR_PRIOR_RATE: f64 = 0.5;

#[derive(Clone, Copy)]
enum Texture {
    Flat,
    Stripes,
    Checker,
    Dots,
}

/// Surface texture per class. Phase and orientation are random per image,
/// so a texture carries no fixed-pixel signal.
const TEXTURES: [Texture; 10] = [
    Texture::Flat,
    Texture::Stripes,
    Texture::Checker,
    Texture::Dots,
    Texture::Stripes,
    Texture::Checker,
    Texture::Flat,
    Texture::Dots,
    Texture::Flat,
    Texture::Stripes,
];

/// Shading offset in [-1, 1] at object-relative position `(u, v)`.
fn texture(kind: Texture, u: f64, v: f64, period: f64, phase: f64) -> f64 {
    let w = 2.0 * PI / period;
    match kind {
        Texture::Flat => 0.0,
        Texture::Stripes => (w * u + phase).sin(),
        Texture::Checker => ((w * u + phase).sin() * (w * v + phase).sin()).signum(),
        Texture::Dots => {
            let d = ((w * u + phase).cos() + (w * v + phase).cos()) / 2.0;
            if d > 0.5 {
                -1.0
            } else {
                0.0
            }
        }
    }
}

/// Membership test in object coordinates (unit radius).
fn inside(class: u8, u: f64, v: f64) -> bool {
    let r = (u * u + v * v).sqrt();
    match class {
        0 => {
            // equilateral triangle inscribed in the unit circle, apex up
            (-0.5..=1.0).contains(&v) && u.abs() <= (1.0 - v) / 3f64.sqrt()
        }
        1 => u.abs().max(v.abs()) <= 0.75,
        2 => (0.55..=1.0).contains(&r),
        3 => u.abs() + v.abs() <= 1.05,
        4 => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
        5 => u * u + (v / 0.5).powi(2) <= 1.0,
        6 => r <= 0.85,
        7 => (u.abs() <= 1.0 && (0.45..=1.0).contains(&v)) || (u.abs() <= 0.28 && v.abs() <= 1.0),
        8 => u.abs() <= 1.0 && v.abs() <= 1.0 && v.abs() <= u.abs() * 1.1,
        _ => r <= 0.55 + 0.4 * (5.0 * v.atan2(u)).cos(),
    }
}

/// Render one image of `class` from its own generator.
pub fn render(class: u8, rng: &mut ChaCha8Rng) -> [u8; IMAGE_BYTES] {
    let mut img = vec![[0f64; 3]; PLANE];

    // background: base color, linear gradient, soft blobs
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.85));
    let angle = rng.random_range(0.0..2.0 * PI);
    let (gx, gy) = (angle.cos(), angle.sin());
    let grad: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                [rng.random_range(0.0..32.0), rng.random_range(0.0..32.0)],
                rng.random_range(3.0..9.0),
                std::array::from_fn(|_| rng.random_range(-0.2..0.2)),
            )
        })
        .collect();
    for y in 0..SIDE {
        for x in 0..SIDE {
            let t = ((x as f64 - 15.5) * gx + (y as f64 - 15.5) * gy) / 16.0;
            let px = &mut img[y * SIDE + x];
            for c in 0..3 {
                px[c] = base[c] + grad[c] * t;
            }
            for (centre, sigma, col) in &blobs {
                let d2 = (x as f64 - centre[0]).powi(2) + (y as f64 - centre[1]).powi(2);
                let w = (-d2 / (2.0 * sigma * sigma)).exp();
                for c in 0..3 {
                    px[c] += col[c] * w;
                }
            }
        }
    }

    // object, 3×3 supersampled coverage
    let cx = rng.random_range(10.0..22.0);
    let cy = rng.random_range(10.0..22.0);
    let radius = rng.random_range(7.0..11.0);
    let rot = rng.random_range(0.0..2.0 * PI);
    let (cr, sr) = (rot.cos(), rot.sin());
    let color: [f64; 3] = if rng.random_bool(COLOR_PRIOR_RATE) {
        let m = CLASS_COLORS[class as usize];
        std::array::from_fn(|c| (m[c] + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0))
    } else {
        std::array::from_fn(|_| rng.random_range(0.0..1.0))
    };
    let alpha = rng.random_range(0.85..1.0);
    let tex_amp = rng.random_range(0.1..0.3);
    let tex_period = rng.random_range(3.0..5.0);
    let tex_phase = rng.random_range(0.0..2.0 * PI);
    let tex_rot = rng.random_range(0.0..PI);
    let (tex_cos, tex_sin) = (tex_rot.cos(), tex_rot.sin());
    for y in 0..SIDE {
        for x in 0..SIDE {
            let mut hits = 0;
            for sy in 0..3 {
                for sx in 0..3 {
                    let dx = (x as f64 + (sx as f64 + 0.5) / 3.0 - 0.5 - cx) / radius;
                    let dy = (y as f64 + (sy as f64 + 0.5) / 3.0 - 0.5 - cy) / radius;
                    let (u, v) = (cr * dx + sr * dy, -sr * dx + cr * dy);
                    hits += inside(class, u, v) as u32;
                }
            }
            if hits > 0 {
                let a = alpha * hits as f64 / 9.0;
                let (u, v) = (x as f64 - cx, y as f64 - cy);
                let shade = 1.0
                    + tex_amp
                        * texture(
                            TEXTURES[class as usize],
                            tex_cos * u + tex_sin * v,
                            -tex_sin * u + tex_cos * v,
                            tex_period,
                            tex_phase,
                        );
                let px = &mut img[y * SIDE + x];
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - a) + color[c] * shade * a;
                }
            }
        }
    }

    // clutter strokes shared by all classes
    let strokes = rng.random_range(0..=2);
    for _ in 0..strokes {
        let (x0, y0) = (rng.random_range(0.0..32.0), rng.random_range(0.0..32.0));
        let ang = rng.random_range(0.0..PI);
        let len = rng.random_range(4.0..14.0);
        let col: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let steps = (len * 3.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / 3.0;
            let (x, y) = (x0 + ang.cos() * t, y0 + ang.sin() * t);
            if (0.0..32.0).contains(&x) && (0.0..32.0).contains(&y) {
                img[y as usize * SIDE + x as usize] = col;
            }
        }
    }

    // pixel noise, quantize
    let sigma = rng.random_range(0.01..0.05);
    let normal = rand_distr::Normal::new(0.0, sigma).expect("positive sigma");
    let mut out = [0u8; IMAGE_BYTES];
    for (i, px) in img.iter().enumerate() {
        for c in 0..3 {
            let v = px[c] + rng.sample(normal);
            out[c * PLANE + i] = (255.0 * v.clamp(0.0, 1.0)).round() as u8;
        }
    }
    out
}

/// Generate `per_class` images of each class in shuffled order. Record `i`
/// is rendered from its own seed, so content does not depend on thread
/// scheduling.
pub fn generate(per_class: usize, seed: u64, stream: u64) -> Vec<ImageRecord> {
    let mut labels: Vec<u8> = (0..per_class * 10).map(|i| (i % 10) as u8).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, 0)));
    let stream_seed = derive_seed(seed, stream, 1);
    crate::exec::map_indices(labels.len(), |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream_seed, i as u64, 0));
        let px = render(labels[i], &mut rng);
        ImageRecord::new(&px, labels[i], i as u32)
    })
}

/// Write five training batches and a test batch of CIFAR-10 layout into `dir`.
/// The standard sizes are 5000 training and 1000 test images per class.
pub fn write_synthetic_cifar(
    dir: &Path,
    seed: u64,
    train_per_class: usize,
    test_per_class: usize,
) -> Result<(), DataError> {
    if !train_per_class.is_multiple_of(5) {
        return Err(DataError::Invalid("train_per_class must be divisible by 5".into()));
    }
    std::fs::create_dir_all(dir)?;
    let train = generate(train_per_class, seed, 1);
    let per_file = train.len() / 5;
    for (name, chunk) in TRAIN_FILES.iter().zip(train.chunks(per_file)) {
        write_cifar(&dir.join(name), chunk)?;
    }
    write_cifar(&dir.join(TEST_FILE), &generate(test_per_class, seed, 2))?;
    Ok(())
}
