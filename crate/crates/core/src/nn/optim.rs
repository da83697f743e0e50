use serde::{Deserialize, Serialize};

use super::{ModelParams, ParamGrads, Tensor};
use crate::error::{Error, Result};

/// SGD hyperparameters. Defaults are the Colored-MNIST profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_step_epochs: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 0.001,
            lr_decay_factor: 0.1,
            lr_decay_step_epochs: 40,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must lie in (0, 1]".into()));
        }
        if self.lr_decay_step_epochs == 0 {
            return Err(Error::Config("lr_decay_step_epochs must be positive".into()));
        }
        Ok(())
    }

    /// Step-decayed learning rate for a zero-based epoch.
    pub fn effective_lr(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_step_epochs) as i32;
        self.learning_rate * self.lr_decay_factor.powi(steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    velocity: Vec<(Tensor, Tensor)>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, params: &ModelParams) -> Self {
        let velocity = params
            .layers()
            .iter()
            .map(|l| {
                (
                    Tensor::zeros(l.weight.shape().to_vec()),
                    Tensor::zeros(l.bias.shape().to_vec()),
                )
            })
            .collect();
        Self { config, velocity }
    }

    pub fn reset(&mut self) {
        for (w, b) in &mut self.velocity {
            w.data_mut().fill(0.0);
            b.data_mut().fill(0.0);
        }
    }
}

/// One SGD step with momentum and L2 weight decay:
/// `v = momentum * v + (g + wd * theta)`, `theta -= lr_epoch * v`.
pub fn sgd_step(params: &mut ModelParams, grads: &ParamGrads, opt: &mut OptimizerState, epoch: usize) -> Result<()> {
    if grads.layers.len() != params.layers().len() || opt.velocity.len() != params.layers().len() {
        return Err(Error::State("gradient/optimizer layout does not match model".into()));
    }
    for (k, g) in grads.layers.iter().enumerate() {
        let l = &params.layers()[k];
        if g.weight.shape() != l.weight.shape() || g.bias.shape() != l.bias.shape() {
            return Err(Error::Dimension(format!("gradient shape mismatch in layer {k}")));
        }
        if !g.weight.is_finite() || !g.bias.is_finite() {
            return Err(Error::NonFinite { layer: k });
        }
    }
    let cfg = opt.config;
    let lr = cfg.effective_lr(epoch);
    for ((layer, g), (vw, vb)) in params.layers_mut().iter_mut().zip(&grads.layers).zip(&mut opt.velocity) {
        update(layer.weight.data_mut(), g.weight.data(), vw.data_mut(), lr, &cfg);
        update(layer.bias.data_mut(), g.bias.data(), vb.data_mut(), lr, &cfg);
    }
    Ok(())
}

fn update(theta: &mut [f64], grad: &[f64], vel: &mut [f64], lr: f64, cfg: &SgdConfig) {
    for ((t, &g), v) in theta.iter_mut().zip(grad).zip(vel) {
        let d = g + cfg.weight_decay * *t;
        *v = cfg.momentum * *v + d;
        *t -= lr * *v;
    }
}
