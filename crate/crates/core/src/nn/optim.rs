use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams};
use crate::tensor::Tensor;

/// Step schedule: the rate is divided by `divisor` at each milestone epoch
/// `floor(fraction · total_epochs)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<f64>,
    /// Divisor applied at each milestone (10 → ÷10).
    pub divisor: f64,
}

impl LrSchedule {
    /// Initial rate, ÷10 at 50% and ÷100 at 75% of training.
    pub fn step_50_75(initial: f64) -> Self {
        Self {
            initial,
            milestones: vec![0.5, 0.75],
            divisor: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(ModelError::Optimizer(format!(
                "initial learning rate must be positive, got {}",
                self.initial
            )));
        }
        if self.divisor.is_nan() || self.divisor < 1.0 {
            return Err(ModelError::Optimizer("divisor must be >= 1".into()));
        }
        let mut prev = 0.0;
        for &m in &self.milestones {
            if !(m > prev && m < 1.0) {
                return Err(ModelError::Optimizer(format!(
                    "milestones must be strictly increasing in (0,1), got {:?}",
                    self.milestones
                )));
            }
            prev = m;
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize, total_epochs: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * total_epochs as f64).floor() as usize)
            .count();
        self.initial / self.divisor.powi(passed as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Heavy-ball SGD with L2 weight decay coupled into the gradient:
///
/// ```text
/// g' = g + wd·w;  v = μ·v + g';  w = w − lr·v
/// ```
#[derive(Clone, Debug)]
pub struct Sgd {
    config: SgdConfig,
    velocity: Vec<Tensor<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &ModelParams) -> Result<Self, ModelError> {
        config.schedule.validate()?;
        if !(0.0..1.0).contains(&config.momentum) {
            return Err(ModelError::Optimizer(format!(
                "momentum must be in [0,1), got {}",
                config.momentum
            )));
        }
        if !(config.weight_decay >= 0.0 && config.weight_decay.is_finite()) {
            return Err(ModelError::Optimizer(format!(
                "weight decay must be non-negative, got {}",
                config.weight_decay
            )));
        }
        let velocity = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Ok(Self { config, velocity })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn velocity(&self) -> &[Tensor<f32>] {
        &self.velocity
    }

    pub fn lr(&self, epoch: usize, total_epochs: usize) -> f64 {
        self.config.schedule.lr_at_epoch(epoch, total_epochs)
    }

    /// Apply one update with the rate of `epoch`. Parameters are untouched
    /// when any gradient is non-finite.
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &[Tensor<f32>],
        epoch: usize,
        total_epochs: usize,
    ) -> Result<(), ModelError> {
        if grads.len() != params.len() {
            return Err(ModelError::Invalid(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for ((name, p), g) in params.names().iter().zip(params.tensors()).zip(grads) {
            if g.shape() != p.shape() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            if !g.is_all_finite() {
                return Err(ModelError::NonFiniteGradient(name.clone()));
            }
        }
        let lr = self.lr(epoch, total_epochs) as f32;
        let mu = self.config.momentum as f32;
        let wd = self.config.weight_decay as f32;
        for ((p, g), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let g2 = gi + wd * *w;
                *vi = mu * *vi + g2;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Layer, ModelSpec};

    fn one_param_model(w: f32) -> (ModelSpec, ModelParams) {
        let spec = ModelSpec {
            input_shape: [1, 1, 1],
            layers: vec![Layer::Flatten, Layer::SoftmaxHead { num_classes: 2 }],
        };
        let params = ModelParams::new(&spec, vec![Tensor::full(&[1, 2], w), Tensor::zeros(&[2])]).unwrap();
        (spec, params)
    }

    fn sgd(lr: f64, momentum: f64, weight_decay: f64, params: &ModelParams) -> Sgd {
        Sgd::new(
            SgdConfig {
                schedule: LrSchedule::step_50_75(lr),
                momentum,
                weight_decay,
            },
            params,
        )
        .unwrap()
    }

    fn grads(g: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::full(&[1, 2], g), Tensor::zeros(&[2])]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let (_, mut params) = one_param_model(0.7);
        let before = params.clone();
        let mut opt = sgd(0.1, 0.9, 0.0, &params);
        opt.step(&mut params, &grads(0.0), 0, 10).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn plain_sgd_step() {
        let (_, mut params) = one_param_model(1.0);
        let mut opt = sgd(0.1, 0.0, 0.0, &params);
        opt.step(&mut params, &grads(1.0), 0, 10).unwrap();
        assert!((params.tensors()[0].data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn two_momentum_steps() {
        let (_, mut params) = one_param_model(1.0);
        let mut opt = sgd(0.1, 0.9, 0.0, &params);
        opt.step(&mut params, &grads(1.0), 0, 10).unwrap();
        assert!((opt.velocity()[0].data()[0] - 1.0).abs() < 1e-7);
        assert!((params.tensors()[0].data()[0] - 0.9).abs() < 1e-7);
        opt.step(&mut params, &grads(1.0), 0, 10).unwrap();
        assert!((opt.velocity()[0].data()[0] - 1.9).abs() < 1e-6);
        assert!((params.tensors()[0].data()[0] - 0.71).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_enters_before_momentum() {
        let (_, mut params) = one_param_model(2.0);
        let mut opt = sgd(0.1, 0.5, 0.1, &params);
        opt.step(&mut params, &grads(0.0), 0, 10).unwrap();
        // g' = 0.2, v = 0.2, w = 2 - 0.02
        assert!((params.tensors()[0].data()[0] - 1.98).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (_, mut params) = one_param_model(1.0);
        let before = params.clone();
        let mut opt = sgd(0.1, 0.0, 0.0, &params);
        let err = opt.step(&mut params, &grads(f32::NAN), 0, 10).unwrap_err();
        assert!(err.to_string().contains("layer1.weight"), "{err}");
        assert_eq!(params, before);
    }

    #[test]
    fn lr_schedule_examples() {
        let s = LrSchedule::step_50_75(0.01);
        assert_eq!(s.lr_at_epoch(0, 40), 0.01);
        assert!((s.lr_at_epoch(19, 40) - 0.01).abs() < 1e-18);
        assert!((s.lr_at_epoch(20, 40) - 0.001).abs() < 1e-15);
        assert!((s.lr_at_epoch(29, 40) - 0.001).abs() < 1e-15);
        assert!((s.lr_at_epoch(30, 40) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn lr_schedule_is_monotone_with_three_levels() {
        let s = LrSchedule::step_50_75(0.1);
        for total in [4usize, 7, 20, 40, 150] {
            let rates: Vec<f64> = (0..total).map(|e| s.lr_at_epoch(e, total)).collect();
            assert!(rates.windows(2).all(|w| w[1] <= w[0]));
            let mut distinct = rates.clone();
            distinct.dedup();
            assert_eq!(distinct.len(), 3, "total {total}");
        }
    }

    #[test]
    fn invalid_milestones_rejected() {
        let mut s = LrSchedule::step_50_75(0.1);
        s.milestones = vec![0.75, 0.5];
        assert!(s.validate().is_err());
        s.milestones = vec![0.5, 1.0];
        assert!(s.validate().is_err());
    }
}
