use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeometry, PoolGeometry};
use super::{Scalar, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        kernels: usize,
        bias: usize,
        geometry: ConvGeometry,
    },
    Affine {
        input: usize,
        weights: usize,
        bias: usize,
    },
    Relu {
        input: usize,
    },
    MaxPool {
        input: usize,
        argmax: Vec<u32>,
    },
    Reshape {
        input: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        input: usize,
        factor: T,
    },
    Sum {
        input: usize,
    },
    DotConst {
        input: usize,
        weights: Vec<T>,
    },
    SoftmaxXent {
        logits: usize,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Ordered record of operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so inputs always precede the
/// operations that consume them. [`Tape::backward`] may run once; a second
/// call fails until [`Tape::reset`] clears the accumulated gradients.
#[derive(Debug)]
pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize, TensorError> {
        if v.tape == self.id && v.index < self.nodes.len() {
            Ok(v.index)
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var { tape: self.id, index }
    }

    fn push_op(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        inputs: &[usize],
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        value.ensure_finite(name)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(value, requires_grad, op))
    }

    /// Record an input value. `requires_grad` leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Value of `v`. Panics if `v` belongs to another tape.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        let i = self.check(v).expect("value(): variable from another tape");
        &self.nodes[i].value
    }

    /// Gradient of `v` after [`Tape::backward`]; `None` if `v` does not
    /// require gradients or was not reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        let i = self.check(v).ok()?;
        self.nodes[i].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    /// Softmax probabilities computed by a [`Tape::softmax_cross_entropy`] node.
    pub fn probabilities(&self, losses: Var) -> Option<&Tensor<T>> {
        let i = self.check(losses).ok()?;
        match &self.nodes[i].op {
            Op::SoftmaxXent { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Cross-correlation of `input [N,C,H,W]` with `kernels [K,C,kh,kw]` plus
    /// per-channel `bias [K]`, zero padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        padding: usize,
        stride: usize,
    ) -> Result<Var, TensorError> {
        let (i, k, b) = (self.check(input)?, self.check(kernels)?, self.check(bias)?);
        let geometry = ConvGeometry::new(
            self.nodes[i].value.shape(),
            self.nodes[k].value.shape(),
            padding,
            stride,
        )?;
        if self.nodes[b].value.shape() != [geometry.out_channels] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                left: self.nodes[b].value.shape().to_vec(),
                right: vec![geometry.out_channels],
            });
        }
        let out = kernels::conv2d_forward(
            self.nodes[i].value.data(),
            self.nodes[k].value.data(),
            self.nodes[b].value.data(),
            &geometry,
        );
        let shape = [geometry.batch, geometry.out_channels, geometry.out_h, geometry.out_w];
        let value = Tensor::new(shape.to_vec(), out)?;
        self.push_op(
            "conv2d",
            value,
            &[i, k, b],
            Op::Conv2d {
                input: i,
                kernels: k,
                bias: b,
                geometry,
            },
        )
    }

    /// `input [N,D] · weights [D,M] + bias [M]`.
    pub fn affine(&mut self, input: Var, weights: Var, bias: Var) -> Result<Var, TensorError> {
        let (i, w, b) = (self.check(input)?, self.check(weights)?, self.check(bias)?);
        let xs = self.nodes[i].value.shape();
        let ws = self.nodes[w].value.shape();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(TensorError::ShapeMismatch {
                op: "affine",
                left: xs.to_vec(),
                right: ws.to_vec(),
            });
        }
        let (n, d, m) = (xs[0], xs[1], ws[1]);
        if self.nodes[b].value.shape() != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "affine bias",
                left: self.nodes[b].value.shape().to_vec(),
                right: vec![m],
            });
        }
        let y = kernels::affine_forward(
            self.nodes[i].value.data(),
            self.nodes[w].value.data(),
            self.nodes[b].value.data(),
            n,
            d,
            m,
        );
        let value = Tensor::new(vec![n, m], y)?;
        self.push_op(
            "affine",
            value,
            &[i, w, b],
            Op::Affine {
                input: i,
                weights: w,
                bias: b,
            },
        )
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let i = self.check(input)?;
        let value = self.nodes[i].value.map(|v| if v > T::ZERO { v } else { T::ZERO });
        self.push_op("relu", value, &[i], Op::Relu { input: i })
    }

    pub fn max_pool2d(&mut self, input: Var, size: usize, stride: usize) -> Result<Var, TensorError> {
        let i = self.check(input)?;
        let g = PoolGeometry::new(self.nodes[i].value.shape(), size, stride)?;
        let (out, argmax) = kernels::max_pool_forward(self.nodes[i].value.data(), &g);
        let value = Tensor::new(vec![g.batch, g.channels, g.out_h, g.out_w], out)?;
        self.push_op("max_pool2d", value, &[i], Op::MaxPool { input: i, argmax })
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let i = self.check(input)?;
        let value = self.nodes[i].value.clone().reshape(shape)?;
        self.push_op("reshape", value, &[i], Op::Reshape { input: i })
    }

    /// Collapse all but the leading dimension.
    pub fn flatten(&mut self, input: Var) -> Result<Var, TensorError> {
        let shape = self.value(input).shape().to_vec();
        let n = shape.first().copied().unwrap_or(1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(input, &[n, rest])
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(usize, usize, Tensor<T>), TensorError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: name,
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(va.shape().to_vec(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ia, ib, value) = self.binary("add", a, b, |x, y| x + y)?;
        self.push_op("add", value, &[ia, ib], Op::Add { a: ia, b: ib })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ia, ib, value) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push_op("mul", value, &[ia, ib], Op::Mul { a: ia, b: ib })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var, TensorError> {
        let i = self.check(input)?;
        let value = self.nodes[i].value.map(|v| v * factor);
        self.push_op("scale", value, &[i], Op::Scale { input: i, factor })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, input: Var) -> Result<Var, TensorError> {
        let i = self.check(input)?;
        let mut acc = T::ZERO;
        for &v in self.nodes[i].value.data() {
            acc += v;
        }
        self.push_op("sum", Tensor::scalar(acc), &[i], Op::Sum { input: i })
    }

    /// `Σ weights[k] · input[k]` with constant weights.
    pub fn dot_const(&mut self, input: Var, weights: &[T]) -> Result<Var, TensorError> {
        let i = self.check(input)?;
        let x = &self.nodes[i].value;
        if x.len() != weights.len() {
            return Err(TensorError::ShapeMismatch {
                op: "dot_const",
                left: x.shape().to_vec(),
                right: vec![weights.len()],
            });
        }
        let mut acc = T::ZERO;
        for (&v, &w) in x.data().iter().zip(weights) {
            acc += w * v;
        }
        self.push_op(
            "dot_const",
            Tensor::scalar(acc),
            &[i],
            Op::DotConst {
                input: i,
                weights: weights.to_vec(),
            },
        )
    }

    /// Per-item negative log-likelihood of `labels` under `softmax(logits)`.
    /// The probabilities are kept on the node, see [`Tape::probabilities`].
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let i = self.check(logits)?;
        let shape = self.nodes[i].value.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                left: shape.to_vec(),
                right: vec![labels.len()],
            });
        }
        let classes = shape[1];
        if let Some((item, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(TensorError::LabelOutOfRange { item, label, classes });
        }
        let (losses, probs) = kernels::softmax_xent_forward(self.nodes[i].value.data(), labels, classes);
        let probs = Tensor::new(shape.to_vec(), probs)?;
        let value = Tensor::new(vec![labels.len()], losses)?;
        self.push_op(
            "softmax_cross_entropy",
            value,
            &[i],
            Op::SoftmaxXent {
                logits: i,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Clear all gradients so that [`Tape::backward`] may run again.
    pub fn reset(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    fn accumulate(&mut self, target: usize, contribution: Tensor<T>, op: &'static str) -> Result<(), TensorError> {
        if !self.nodes[target].requires_grad {
            return Ok(());
        }
        contribution.ensure_finite(op)?;
        match &mut self.nodes[target].grad {
            Some(g) => {
                for (a, v) in g.data_mut().iter_mut().zip(contribution.data()) {
                    *a += *v;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        let r = self.check(root)?;
        if self.nodes[r].value.len() != 1 {
            return Err(TensorError::RootNotScalar(self.nodes[r].value.shape().to_vec()));
        }
        if self.backward_done {
            return Err(TensorError::BackwardAlreadyRun);
        }
        self.backward_done = true;
        if !self.nodes[r].requires_grad {
            return Ok(());
        }
        let root_shape = self.nodes[r].value.shape().to_vec();
        self.nodes[r].grad = Some(Tensor::full(&root_shape, T::ONE));

        for idx in (0..=r).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            let g = self.nodes[idx].grad.take().expect("checked above");
            let result = self.backward_node(&op, &g);
            self.nodes[idx].op = op;
            self.nodes[idx].grad = Some(g);
            result?;
        }
        Ok(())
    }

    fn backward_node(&mut self, op: &Op<T>, g: &Tensor<T>) -> Result<(), TensorError> {
        match *op {
            Op::Leaf => Ok(()),
            Op::Conv2d {
                input,
                kernels,
                bias,
                geometry,
            } => {
                let need = [
                    self.nodes[input].requires_grad,
                    self.nodes[kernels].requires_grad,
                    self.nodes[bias].requires_grad,
                ];
                let grads = kernels::conv2d_backward(
                    self.nodes[input].value.data(),
                    self.nodes[kernels].value.data(),
                    g.data(),
                    &geometry,
                    need,
                );
                if let Some(d) = grads.input {
                    let t = Tensor::new(self.nodes[input].value.shape().to_vec(), d)?;
                    self.accumulate(input, t, "conv2d backward (input)")?;
                }
                if let Some(d) = grads.kernels {
                    let t = Tensor::new(self.nodes[kernels].value.shape().to_vec(), d)?;
                    self.accumulate(kernels, t, "conv2d backward (kernels)")?;
                }
                if let Some(d) = grads.bias {
                    let t = Tensor::new(self.nodes[bias].value.shape().to_vec(), d)?;
                    self.accumulate(bias, t, "conv2d backward (bias)")?;
                }
                Ok(())
            }
            Op::Affine { input, weights, bias } => {
                let xs = self.nodes[input].value.shape();
                let (n, d) = (xs[0], xs[1]);
                let m = self.nodes[weights].value.shape()[1];
                let dy = g.data();
                let dx = self.nodes[input].requires_grad.then(|| {
                    let mut dx = vec![T::ZERO; n * d];
                    // dX = dY · Wᵀ
                    T::gemm(
                        n,
                        m,
                        d,
                        T::ONE,
                        dy,
                        m as isize,
                        1,
                        self.nodes[weights].value.data(),
                        1,
                        m as isize,
                        T::ZERO,
                        &mut dx,
                        d as isize,
                        1,
                    );
                    dx
                });
                let dw = self.nodes[weights].requires_grad.then(|| {
                    let mut dw = vec![T::ZERO; d * m];
                    // dW = Xᵀ · dY
                    T::gemm(
                        d,
                        n,
                        m,
                        T::ONE,
                        self.nodes[input].value.data(),
                        1,
                        d as isize,
                        dy,
                        m as isize,
                        1,
                        T::ZERO,
                        &mut dw,
                        m as isize,
                        1,
                    );
                    dw
                });
                let db = self.nodes[bias].requires_grad.then(|| {
                    let mut db = vec![T::ZERO; m];
                    for row in dy.chunks_exact(m) {
                        for (a, &v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    db
                });
                if let Some(d) = dx {
                    let t = Tensor::new(self.nodes[input].value.shape().to_vec(), d)?;
                    self.accumulate(input, t, "affine backward (input)")?;
                }
                if let Some(d) = dw {
                    let t = Tensor::new(self.nodes[weights].value.shape().to_vec(), d)?;
                    self.accumulate(weights, t, "affine backward (weights)")?;
                }
                if let Some(d) = db {
                    let t = Tensor::new(vec![m], d)?;
                    self.accumulate(bias, t, "affine backward (bias)")?;
                }
                Ok(())
            }
            Op::Relu { input } => {
                let x = &self.nodes[input].value;
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::ZERO { gv } else { T::ZERO })
                    .collect();
                let t = Tensor::new(x.shape().to_vec(), data)?;
                self.accumulate(input, t, "relu backward")
            }
            Op::MaxPool { input, ref argmax } => {
                let mut dx = Tensor::zeros(self.nodes[input].value.shape());
                let d = dx.data_mut();
                for (&a, &gv) in argmax.iter().zip(g.data()) {
                    d[a as usize] += gv;
                }
                self.accumulate(input, dx, "max_pool2d backward")
            }
            Op::Reshape { input } => {
                let t = g.clone().reshape(self.nodes[input].value.shape())?;
                self.accumulate(input, t, "reshape backward")
            }
            Op::Add { a, b } => {
                let ga = g.clone();
                let gb = g.clone();
                self.accumulate(a, ga, "add backward")?;
                self.accumulate(b, gb, "add backward")
            }
            Op::Mul { a, b } => {
                let va = &self.nodes[a].value;
                let vb = &self.nodes[b].value;
                let ga = Tensor::new(
                    va.shape().to_vec(),
                    g.data().iter().zip(vb.data()).map(|(&gv, &y)| gv * y).collect(),
                )?;
                let gb = Tensor::new(
                    vb.shape().to_vec(),
                    g.data().iter().zip(va.data()).map(|(&gv, &x)| gv * x).collect(),
                )?;
                self.accumulate(a, ga, "mul backward")?;
                self.accumulate(b, gb, "mul backward")
            }
            Op::Scale { input, factor } => {
                let t = g.map(|v| v * factor);
                self.accumulate(input, t, "scale backward")
            }
            Op::Sum { input } => {
                let gv = g.item();
                let t = Tensor::full(self.nodes[input].value.shape(), gv);
                self.accumulate(input, t, "sum backward")
            }
            Op::DotConst { input, ref weights } => {
                let gv = g.item();
                let t = Tensor::new(
                    self.nodes[input].value.shape().to_vec(),
                    weights.iter().map(|&w| w * gv).collect(),
                )?;
                self.accumulate(input, t, "dot_const backward")
            }
            Op::SoftmaxXent {
                logits,
                ref labels,
                ref probs,
            } => {
                let classes = probs.shape()[1];
                let mut dz = probs.clone();
                for (row, (&label, &gv)) in labels.iter().zip(g.data()).enumerate() {
                    let r = &mut dz.data_mut()[row * classes..(row + 1) * classes];
                    r[label] -= T::ONE;
                    for v in r.iter_mut() {
                        *v *= gv;
                    }
                }
                self.accumulate(logits, dz, "softmax_cross_entropy backward")
            }
        }
    }
}
