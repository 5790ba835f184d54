//! Forward and backward kernels on raw slices.
//!
//! Convolution is cross-correlation lowered to GEMM through im2col. Batches are
//! processed in chunks of [`CHUNK_ITEMS`] items; weight gradients are reduced
//! per chunk and then summed in chunk order.

use super::{Scalar, TensorError};
use crate::exec::{map_chunks_mut, CHUNK_ITEMS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    /// Validate `input [N,C,H,W]` against `kernels [K,C,kh,kw]`.
    pub fn new(input: &[usize], kernels: &[usize], padding: usize, stride: usize) -> Result<Self, TensorError> {
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d",
            left: input.to_vec(),
            right: kernels.to_vec(),
        };
        if input.len() != 4 || kernels.len() != 4 || input[1] != kernels[1] {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(TensorError::InvalidShape {
                shape: kernels.to_vec(),
                reason: "stride must be positive".into(),
            });
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (k, kh, kw) = (kernels[0], kernels[2], kernels[3]);
        let (ph, pw) = (h + 2 * padding, w + 2 * padding);
        if kh > ph || kw > pw {
            return Err(mismatch());
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(TensorError::NonIntegerOutput {
                op: "conv2d",
                detail: format!("padded input {ph}x{pw}, kernel {kh}x{kw}, stride {stride}"),
            });
        }
        Ok(Self {
            batch: n,
            in_channels: c,
            height: h,
            width: w,
            out_channels: k,
            kernel_h: kh,
            kernel_w: kw,
            padding,
            stride,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_item(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    fn out_item(&self) -> usize {
        self.out_channels * self.out_plane()
    }

    /// Range of output columns whose input column `ox*stride + kx - pad` is in
    /// bounds.
    fn valid_range(&self, k_off: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.padding;
        let lo = if p > k_off { (p - k_off).div_ceil(s) } else { 0 };
        let hi = if extent + p > k_off {
            ((extent + p - k_off - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unroll items `[first, first+count)` into `col[patch_len, count*P]`.
fn im2col<T: Scalar>(input: &[T], g: &ConvGeometry, first: usize, count: usize, col: &mut [T]) {
    let plane = g.out_plane();
    let cols = count * plane;
    let (h, w) = (g.height, g.width);
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            let (oy_lo, oy_hi) = g.valid_range(ky, h, g.out_h);
            for kx in 0..g.kernel_w {
                let (ox_lo, ox_hi) = g.valid_range(kx, w, g.out_w);
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let row_buf = &mut col[row * cols..(row + 1) * cols];
                for j in 0..count {
                    let src = &input[(first + j) * g.in_item() + c * h * w..][..h * w];
                    let dst = &mut row_buf[j * plane..(j + 1) * plane];
                    for oy in 0..g.out_h {
                        let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        if oy < oy_lo || oy >= oy_hi {
                            line.fill(T::ZERO);
                            continue;
                        }
                        let iy = oy * g.stride + ky - g.padding;
                        let src_row = &src[iy * w..(iy + 1) * w];
                        line[..ox_lo].fill(T::ZERO);
                        line[ox_hi..].fill(T::ZERO);
                        if g.stride == 1 {
                            let ix0 = ox_lo + kx - g.padding;
                            line[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + ox_hi - ox_lo]);
                        } else {
                            for ox in ox_lo..ox_hi {
                                line[ox] = src_row[ox * g.stride + kx - g.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Accumulate `col[patch_len, count*P]` back into `dinput` (items local to
/// the chunk).
fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, count: usize, dinput: &mut [T]) {
    let plane = g.out_plane();
    let cols = count * plane;
    let (h, w) = (g.height, g.width);
    for c in 0..g.in_channels {
        for ky in 0..g.kernel_h {
            let (oy_lo, oy_hi) = g.valid_range(ky, h, g.out_h);
            for kx in 0..g.kernel_w {
                let (ox_lo, ox_hi) = g.valid_range(kx, w, g.out_w);
                let row = (c * g.kernel_h + ky) * g.kernel_w + kx;
                let row_buf = &col[row * cols..(row + 1) * cols];
                for j in 0..count {
                    let dst = &mut dinput[j * g.in_item() + c * h * w..][..h * w];
                    let src = &row_buf[j * plane..(j + 1) * plane];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.padding;
                        let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                        let dst_row = &mut dst[iy * w..(iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            dst_row[ox * g.stride + kx - g.padding] += line[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. Returns `[N,K,out_h,out_w]` data.
pub(crate) fn conv2d_forward<T: Scalar>(input: &[T], kernels: &[T], bias: &[T], g: &ConvGeometry) -> Vec<T> {
    let mut out = vec![T::ZERO; g.batch * g.out_item()];
    let plane = g.out_plane();
    let patch = g.patch_len();
    let k = g.out_channels;
    map_chunks_mut(&mut out, CHUNK_ITEMS * g.out_item(), |chunk, out_chunk| {
        let first = chunk * CHUNK_ITEMS;
        let count = out_chunk.len() / g.out_item();
        let cols = count * plane;
        let mut col = vec![T::ZERO; patch * cols];
        im2col(input, g, first, count, &mut col);
        let mut res = vec![T::ZERO; k * cols];
        T::gemm(
            k,
            patch,
            cols,
            T::ONE,
            kernels,
            patch as isize,
            1,
            &col,
            cols as isize,
            1,
            T::ZERO,
            &mut res,
            cols as isize,
            1,
        );
        for j in 0..count {
            for kk in 0..k {
                let src = &res[kk * cols + j * plane..][..plane];
                let dst = &mut out_chunk[(j * k + kk) * plane..][..plane];
                let b = bias[kk];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + b;
                }
            }
        }
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernels: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernels: &[T],
    dout: &[T],
    g: &ConvGeometry,
    need: [bool; 3],
) -> ConvGrads<T> {
    let [need_input, need_kernels, need_bias] = need;
    let plane = g.out_plane();
    let patch = g.patch_len();
    let k = g.out_channels;

    let bias = need_bias.then(|| {
        let mut db = vec![T::ZERO; k];
        for n in 0..g.batch {
            for (kk, acc) in db.iter_mut().enumerate() {
                for &v in &dout[(n * k + kk) * plane..][..plane] {
                    *acc += v;
                }
            }
        }
        db
    });

    if !need_input && !need_kernels {
        return ConvGrads {
            input: None,
            kernels: None,
            bias,
        };
    }

    let mut dinput = vec![T::ZERO; if need_input { g.batch * g.in_item() } else { 0 }];
    let chunk_count = g.batch.div_ceil(CHUNK_ITEMS);
    let chunk_fn = |chunk: usize, dinput_chunk: Option<&mut [T]>| -> Option<Vec<T>> {
        let first = chunk * CHUNK_ITEMS;
        let count = CHUNK_ITEMS.min(g.batch - first);
        let cols = count * plane;
        let mut dres = vec![T::ZERO; k * cols];
        for j in 0..count {
            for kk in 0..k {
                dres[kk * cols + j * plane..][..plane]
                    .copy_from_slice(&dout[((first + j) * k + kk) * plane..][..plane]);
            }
        }
        let dk = need_kernels.then(|| {
            let mut col = vec![T::ZERO; patch * cols];
            im2col(input, g, first, count, &mut col);
            let mut dk = vec![T::ZERO; k * patch];
            // dK = dres · colᵀ
            T::gemm(
                k,
                cols,
                patch,
                T::ONE,
                &dres,
                cols as isize,
                1,
                &col,
                1,
                cols as isize,
                T::ZERO,
                &mut dk,
                patch as isize,
                1,
            );
            dk
        });
        if let Some(dst) = dinput_chunk {
            let mut dcol = vec![T::ZERO; patch * cols];
            // dcol = Kᵀ · dres
            T::gemm(
                patch,
                k,
                cols,
                T::ONE,
                kernels,
                1,
                patch as isize,
                &dres,
                cols as isize,
                1,
                T::ZERO,
                &mut dcol,
                cols as isize,
                1,
            );
            col2im(&dcol, g, count, dst);
        }
        dk
    };

    let partials: Vec<Option<Vec<T>>> = if need_input {
        map_chunks_mut(&mut dinput, CHUNK_ITEMS * g.in_item(), |chunk, dst| {
            chunk_fn(chunk, Some(dst))
        })
    } else {
        crate::exec::map_indices(chunk_count, |chunk| chunk_fn(chunk, None))
    };

    let kernels_grad = need_kernels.then(|| {
        let mut it = partials.into_iter().flatten();
        let mut acc = it.next().expect("at least one chunk");
        for p in it {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        acc
    });

    ConvGrads {
        input: need_input.then_some(dinput),
        kernels: kernels_grad,
        bias,
    }
}

/// Direct nested-loop cross-correlation, used as a test oracle.
pub fn conv2d_reference(
    input: &[f64],
    input_shape: [usize; 4],
    kernels: &[f64],
    kernel_shape: [usize; 4],
    bias: &[f64],
    padding: usize,
    stride: usize,
) -> Vec<f64> {
    let [n, c, h, w] = input_shape;
    let [k, _, kh, kw] = kernel_shape;
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut out = vec![0.0; n * k * oh * ow];
    for ni in 0..n {
        for ki in 0..k {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[ki];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * stride + dy) as isize - padding as isize;
                                let ix = (ox * stride + dx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input[((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = kernels[((ki * c + ci) * kh + dy) * kw + dx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((ni * k + ki) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub size: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeometry {
    pub fn new(shape: &[usize], size: usize, stride: usize) -> Result<Self, TensorError> {
        if shape.len() != 4 || size == 0 || stride == 0 {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("max_pool2d needs [N,C,H,W] and positive size/stride (size {size}, stride {stride})"),
            });
        }
        let (h, w) = (shape[2], shape[3]);
        if size > h || size > w || !(h - size).is_multiple_of(stride) || !(w - size).is_multiple_of(stride) {
            return Err(TensorError::NonIntegerOutput {
                op: "max_pool2d",
                detail: format!("input {h}x{w}, window {size}, stride {stride}"),
            });
        }
        Ok(Self {
            batch: shape[0],
            channels: shape[1],
            height: h,
            width: w,
            size,
            stride,
            out_h: (h - size) / stride + 1,
            out_w: (w - size) / stride + 1,
        })
    }
}

/// Max pooling. Returns outputs and, per output, the flat index of the winning
/// input (first maximum in row-major window order).
pub(crate) fn max_pool_forward<T: Scalar>(input: &[T], g: &PoolGeometry) -> (Vec<T>, Vec<u32>) {
    let planes = g.batch * g.channels;
    let in_plane = g.height * g.width;
    let out_plane = g.out_h * g.out_w;
    let mut out = Vec::with_capacity(planes * out_plane);
    let mut arg = Vec::with_capacity(planes * out_plane);
    for p in 0..planes {
        let base = p * in_plane;
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let mut best_i = base + oy * g.stride * g.width + ox * g.stride;
                let mut best = input[best_i];
                for dy in 0..g.size {
                    for dx in 0..g.size {
                        let i = base + (oy * g.stride + dy) * g.width + ox * g.stride + dx;
                        if input[i] > best {
                            best = input[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i as u32);
            }
        }
    }
    (out, arg)
}

/// `y[N,M] = x[N,D]·w[D,M] + b[M]`.
pub(crate) fn affine_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], n: usize, d: usize, m: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * m);
    for _ in 0..n {
        y.extend_from_slice(b);
    }
    T::gemm(
        n,
        d,
        m,
        T::ONE,
        x,
        d as isize,
        1,
        w,
        m as isize,
        1,
        T::ONE,
        &mut y,
        m as isize,
        1,
    );
    y
}

/// Fused log-softmax cross-entropy. Returns per-row losses and probabilities.
pub(crate) fn softmax_xent_forward<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> (Vec<T>, Vec<T>) {
    let mut losses = Vec::with_capacity(labels.len());
    let mut probs = vec![T::ZERO; logits.len()];
    for (row, &label) in labels.iter().enumerate() {
        let z = &logits[row * classes..(row + 1) * classes];
        let mut max = z[0];
        for &v in &z[1..] {
            if v > max {
                max = v;
            }
        }
        let p = &mut probs[row * classes..(row + 1) * classes];
        let mut sum = T::ZERO;
        for (pi, &zi) in p.iter_mut().zip(z) {
            *pi = (zi - max).exp();
            sum += *pi;
        }
        for pi in p.iter_mut() {
            *pi = *pi / sum;
        }
        // (max - z_y) >= 0 and ln(sum) >= 0 since sum >= 1.
        losses.push((max - z[label]) + sum.ln());
    }
    (losses, probs)
}
