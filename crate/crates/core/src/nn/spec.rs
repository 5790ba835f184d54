use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel_size: usize,
        padding: usize,
        stride: usize,
        activation: Activation,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    Flatten,
    Affine {
        out_units: usize,
        activation: Activation,
    },
    /// Affine map to class logits; softmax is applied by the loss.
    SoftmaxHead {
        num_classes: usize,
    },
}

impl Layer {
    fn conv3(out_channels: usize) -> Self {
        Layer::Conv {
            out_channels,
            kernel_size: 3,
            padding: 1,
            stride: 1,
            activation: Activation::Relu,
        }
    }

    fn pool() -> Self {
        Layer::MaxPool { size: 2, stride: 2 }
    }

    fn dense(out_units: usize) -> Self {
        Layer::Affine {
            out_units,
            activation: Activation::Relu,
        }
    }
}

/// Activation shape between layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Image {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl ActShape {
    pub fn numel(self) -> usize {
        match self {
            ActShape::Image {
                channels,
                height,
                width,
            } => channels * height * width,
            ActShape::Flat(d) => d,
        }
    }
}

/// Shape and Glorot fan of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

/// Ordered layer list on a declared `[C,H,W]` input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<Layer>,
}

pub const HCN_PRESETS: &[&str] = &["vgg11", "vgg-mini"];

impl ModelSpec {
    /// Check the layer invariants and return the activation shape after each
    /// layer.
    pub fn validate(&self) -> Result<Vec<ActShape>, ModelError> {
        let heads = self
            .layers
            .iter()
            .filter(|l| matches!(l, Layer::SoftmaxHead { .. }))
            .count();
        if heads != 1 {
            return Err(ModelError::Invalid(format!(
                "exactly one softmax_head is required, found {heads}"
            )));
        }
        if !matches!(self.layers.last(), Some(Layer::SoftmaxHead { .. })) {
            return Err(ModelError::Invalid("softmax_head must be the last layer".into()));
        }
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(ModelError::Invalid(format!(
                "input shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        let mut shape = ActShape::Image {
            channels: c,
            height: h,
            width: w,
        };
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| ModelError::Invalid(format!("layer {i} ({layer:?}): {msg}"));
            shape = match (*layer, shape) {
                (
                    Layer::Conv {
                        out_channels,
                        kernel_size,
                        padding,
                        stride,
                        ..
                    },
                    ActShape::Image { height, width, .. },
                ) => {
                    if out_channels == 0 || kernel_size == 0 || stride == 0 {
                        return Err(bad("sizes must be positive".into()));
                    }
                    let (ph, pw) = (height + 2 * padding, width + 2 * padding);
                    if kernel_size > ph || kernel_size > pw {
                        return Err(bad(format!("kernel larger than padded input {ph}x{pw}")));
                    }
                    if (ph - kernel_size) % stride != 0 || (pw - kernel_size) % stride != 0 {
                        return Err(bad("non-integer output size".into()));
                    }
                    ActShape::Image {
                        channels: out_channels,
                        height: (ph - kernel_size) / stride + 1,
                        width: (pw - kernel_size) / stride + 1,
                    }
                }
                (
                    Layer::MaxPool { size, stride },
                    ActShape::Image {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    if size == 0 || stride == 0 || size > height || size > width {
                        return Err(bad(format!("window does not fit {height}x{width}")));
                    }
                    if (height - size) % stride != 0 || (width - size) % stride != 0 {
                        return Err(bad("non-integer output size".into()));
                    }
                    ActShape::Image {
                        channels,
                        height: (height - size) / stride + 1,
                        width: (width - size) / stride + 1,
                    }
                }
                (Layer::Flatten, s @ ActShape::Image { .. }) => ActShape::Flat(s.numel()),
                (Layer::Affine { out_units, .. }, ActShape::Flat(_)) if out_units > 0 => ActShape::Flat(out_units),
                (Layer::SoftmaxHead { num_classes }, ActShape::Flat(_)) => {
                    if num_classes < 2 {
                        return Err(bad("at least 2 classes are required".into()));
                    }
                    ActShape::Flat(num_classes)
                }
                (_, s) => return Err(bad(format!("cannot follow activation shape {s:?}"))),
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(Layer::SoftmaxHead { num_classes }) => *num_classes,
            _ => 0,
        }
    }

    /// Parameter tensors in canonical order, named `layer{i}.weight` and
    /// `layer{i}.bias`.
    pub fn param_infos(&self) -> Result<Vec<ParamInfo>, ModelError> {
        let shapes = self.validate()?;
        let [c0, h0, w0] = self.input_shape;
        let mut prev = ActShape::Image {
            channels: c0,
            height: h0,
            width: w0,
        };
        let mut out = Vec::new();
        for (i, (layer, &shape)) in self.layers.iter().zip(&shapes).enumerate() {
            let mut push = |wshape: Vec<usize>, fan_in, fan_out, bias_len| {
                out.push(ParamInfo {
                    name: format!("layer{i}.weight"),
                    shape: wshape,
                    fan_in,
                    fan_out,
                    is_bias: false,
                });
                out.push(ParamInfo {
                    name: format!("layer{i}.bias"),
                    shape: vec![bias_len],
                    fan_in,
                    fan_out,
                    is_bias: true,
                });
            };
            match (*layer, prev) {
                (
                    Layer::Conv {
                        out_channels,
                        kernel_size,
                        ..
                    },
                    ActShape::Image { channels, .. },
                ) => {
                    let area = kernel_size * kernel_size;
                    push(
                        vec![out_channels, channels, kernel_size, kernel_size],
                        channels * area,
                        out_channels * area,
                        out_channels,
                    );
                }
                (Layer::Affine { out_units, .. }, ActShape::Flat(d)) => {
                    push(vec![d, out_units], d, out_units, out_units)
                }
                (Layer::SoftmaxHead { num_classes }, ActShape::Flat(d)) => {
                    push(vec![d, num_classes], d, num_classes, num_classes)
                }
                _ => {}
            }
            prev = shape;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize, ModelError> {
        Ok(self
            .param_infos()?
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum())
    }
}

/// Low-capacity network: one linear 4-channel 3×3 convolution without
/// downsampling, then a softmax classification layer.
pub fn build_lcn(input_shape: [usize; 3], num_classes: usize) -> Result<ModelSpec, ModelError> {
    let spec = ModelSpec {
        input_shape,
        layers: vec![
            Layer::Conv {
                out_channels: 4,
                kernel_size: 3,
                padding: 1,
                stride: 1,
                activation: Activation::Linear,
            },
            Layer::Flatten,
            Layer::SoftmaxHead { num_classes },
        ],
    };
    spec.validate()?;
    Ok(spec)
}

/// High-capacity network presets on a `3×32×32` input.
///
/// - `vgg11`: the 8-conv VGG-11 layout with 1024-unit dense layers, no dropout.
/// - `vgg-mini`: conv32-pool-conv64-pool-conv128-pool-dense256-head.
pub fn build_hcn(preset: &str, num_classes: usize) -> Result<ModelSpec, ModelError> {
    let p = Layer::pool;
    let c = Layer::conv3;
    let mut layers = match preset {
        "vgg11" => vec![
            c(64),
            p(),
            c(128),
            p(),
            c(256),
            c(256),
            p(),
            c(512),
            c(512),
            p(),
            c(512),
            c(512),
            p(),
            Layer::Flatten,
            Layer::dense(1024),
            Layer::dense(1024),
        ],
        "vgg-mini" => vec![c(32), p(), c(64), p(), c(128), p(), Layer::Flatten, Layer::dense(256)],
        other => {
            return Err(ModelError::UnknownPreset {
                name: other.to_string(),
                known: HCN_PRESETS.join(", "),
            })
        }
    };
    layers.push(Layer::SoftmaxHead { num_classes });
    let spec = ModelSpec {
        input_shape: [3, 32, 32],
        layers,
    };
    spec.validate()?;
    Ok(spec)
}

/// `lcn` or any HCN preset.
pub fn model_by_name(name: &str, num_classes: usize) -> Result<ModelSpec, ModelError> {
    match name {
        "lcn" => build_lcn([3, 32, 32], num_classes),
        other => build_hcn(other, num_classes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lcn_layout() {
        let spec = build_lcn([3, 32, 32], 2).unwrap();
        let infos = spec.param_infos().unwrap();
        assert_eq!(infos[0].shape, vec![4, 3, 3, 3]);
        let conv_params: usize = infos[..2].iter().map(|p| p.shape.iter().product::<usize>()).sum();
        assert_eq!(conv_params, 112);
        assert_eq!(infos[2].shape, vec![4096, 2]);
        assert_eq!(spec.validate().unwrap()[1], ActShape::Flat(4096));
    }

    #[test]
    fn lcn_needs_two_classes() {
        assert!(build_lcn([3, 32, 32], 1).is_err());
    }

    #[test]
    fn vgg11_dense_widths() {
        let spec = build_hcn("vgg11", 2).unwrap();
        let dense: Vec<usize> = spec
            .param_infos()
            .unwrap()
            .iter()
            .filter(|p| !p.is_bias && p.shape.len() == 2)
            .map(|p| p.shape[1])
            .collect();
        assert_eq!(dense, vec![1024, 1024, 2]);
        let convs = spec.layers.iter().filter(|l| matches!(l, Layer::Conv { .. })).count();
        assert_eq!(convs, 8);
    }

    #[test]
    fn unknown_preset_lists_presets() {
        let err = build_hcn("resnet56", 2).unwrap_err().to_string();
        assert!(err.contains("vgg11") && err.contains("vgg-mini"), "{err}");
    }

    #[test]
    fn two_heads_rejected() {
        let mut spec = build_hcn("vgg-mini", 2).unwrap();
        spec.layers
            .insert(spec.layers.len() - 1, Layer::SoftmaxHead { num_classes: 2 });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn head_must_be_last_and_shapes_compose() {
        let spec = ModelSpec {
            input_shape: [3, 32, 32],
            layers: vec![Layer::SoftmaxHead { num_classes: 2 }, Layer::Flatten],
        };
        assert!(spec.validate().is_err());
        let spec = ModelSpec {
            input_shape: [3, 32, 32],
            layers: vec![
                Layer::Affine {
                    out_units: 4,
                    activation: Activation::Relu,
                },
                Layer::SoftmaxHead { num_classes: 2 },
            ],
        };
        assert!(spec.validate().is_err(), "affine directly on an image");
    }

    #[test]
    fn spec_json_round_trip() {
        let spec = build_hcn("vgg-mini", 3).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"type\":\"softmax_head\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
