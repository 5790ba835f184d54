use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{Activation, Layer, ModelSpec};
use super::ModelError;
use crate::tensor::{Tape, Tensor, Var};

/// Named parameter tensors in the canonical order of
/// [`ModelSpec::param_infos`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor<f32>>,
}

impl ModelParams {
    /// Build from tensors, checking names and shapes against `spec`.
    pub fn new(spec: &ModelSpec, tensors: Vec<Tensor<f32>>) -> Result<Self, ModelError> {
        let infos = spec.param_infos()?;
        if infos.len() != tensors.len() {
            return Err(ModelError::Invalid(format!(
                "expected {} parameter tensors, got {}",
                infos.len(),
                tensors.len()
            )));
        }
        for (info, t) in infos.iter().zip(&tensors) {
            if info.shape != t.shape() {
                return Err(ModelError::ParamShape {
                    name: info.name.clone(),
                    expected: info.shape.clone(),
                    actual: t.shape().to_vec(),
                });
            }
            t.ensure_finite("model parameters")?;
        }
        Ok(Self {
            names: infos.into_iter().map(|i| i.name).collect(),
            tensors,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<f32>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<f32>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

/// Glorot-uniform weights on `±sqrt(6 / (fan_in + fan_out))` (open interval),
/// zero biases. Conv fans are `C·kh·kw` in and `K·kh·kw` out.
pub fn glorot_init(spec: &ModelSpec, seed: u64) -> Result<ModelParams, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let infos = spec.param_infos()?;
    let mut tensors = Vec::with_capacity(infos.len());
    for info in &infos {
        if info.is_bias {
            tensors.push(Tensor::zeros(&info.shape));
            continue;
        }
        let limit = (6.0 / (info.fan_in + info.fan_out) as f64).sqrt();
        let t = Tensor::from_fn(&info.shape, |_| loop {
            let v = rng.random_range(-limit..limit) as f32;
            if (v as f64).abs() < limit {
                break v;
            }
        });
        tensors.push(t);
    }
    ModelParams::new(spec, tensors)
}

pub fn register_params(tape: &mut Tape<f32>, params: &ModelParams, requires_grad: bool) -> Vec<Var> {
    params
        .tensors
        .iter()
        .map(|t| tape.leaf(t.clone(), requires_grad))
        .collect()
}

/// Record the forward pass of `spec` on `input [N,C,H,W]`; returns logits
/// `[N, num_classes]`.
pub fn forward(tape: &mut Tape<f32>, spec: &ModelSpec, params: &[Var], input: Var) -> Result<Var, ModelError> {
    let mut x = input;
    let mut p = params.iter().copied();
    let mut next = || {
        p.next()
            .ok_or_else(|| ModelError::Invalid("too few parameter tensors".into()))
    };
    for layer in &spec.layers {
        x = match *layer {
            Layer::Conv {
                padding,
                stride,
                activation,
                ..
            } => {
                let (w, b) = (next()?, next()?);
                let y = tape.conv2d(x, w, b, padding, stride)?;
                activate(tape, y, activation)?
            }
            Layer::MaxPool { size, stride } => tape.max_pool2d(x, size, stride)?,
            Layer::Flatten => tape.flatten(x)?,
            Layer::Affine { activation, .. } => {
                let (w, b) = (next()?, next()?);
                let y = tape.affine(x, w, b)?;
                activate(tape, y, activation)?
            }
            Layer::SoftmaxHead { .. } => {
                let (w, b) = (next()?, next()?);
                tape.affine(x, w, b)?
            }
        };
    }
    Ok(x)
}

fn activate(tape: &mut Tape<f32>, x: Var, activation: Activation) -> Result<Var, ModelError> {
    Ok(match activation {
        Activation::Linear => x,
        Activation::Relu => tape.relu(x)?,
    })
}

/// Inference-only logits for a batch.
pub fn predict_logits(spec: &ModelSpec, params: &ModelParams, input: Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params, false);
    let x = tape.constant(input);
    let y = forward(&mut tape, spec, &vars, x)?;
    Ok(tape.value(y).clone())
}
