//! Heavy-ball SGD with weight decay and learning-rate-adjusted gradient clipping.

use crate::conv::ConvParams;
use crate::error::{config_err, shape_err, Result};
use crate::tensor::Real;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;
pub const DEFAULT_CLIP_THETA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Gradients are clamped to `[-theta/lr, theta/lr]`; `f64::INFINITY` disables clipping.
    pub clip_theta: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            clip_theta: DEFAULT_CLIP_THETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub config: SgdConfig,
    /// One momentum buffer per parameter tensor, shaped like it.
    pub velocity: Vec<ConvParams<T>>,
    pub steps: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: SgdConfig, params: &[ConvParams<T>]) -> Self {
        Self {
            config,
            velocity: params
                .iter()
                .map(|p| ConvParams::zeros(p.in_channels(), p.out_channels()))
                .collect(),
            steps: 0,
        }
    }

    /// Effective per-element gradient bound at learning rate `lr`.
    pub fn clip_bound(&self, lr: f64) -> f64 {
        self.config.clip_theta / lr
    }
}

/// One optimizer step:
/// `g' = clamp(g, ±θ/lr)`, `v ← m·v − lr·(g' + wd·w)`, `w ← w + v`.
pub fn sgd_step<T: Real>(
    params: &mut [ConvParams<T>],
    grads: &[ConvParams<T>],
    state: &mut OptimizerState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(config_err!("learning rate must be positive and finite, got {lr}"));
    }
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(shape_err!(
            "sgd: {} params, {} grads, {} momentum buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        ));
    }
    let bound = state.clip_bound(lr);
    let cfg = state.config;
    let update = |w: &mut T, g: T, v: &mut T| {
        let g = g.to_f64().clamp(-bound, bound);
        let vel = cfg.momentum * v.to_f64() - lr * (g + cfg.weight_decay * w.to_f64());
        *v = T::from_f64(vel);
        *w = T::from_f64(w.to_f64() + vel);
    };
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        if p.weights.dims() != g.weights.dims()
            || p.weights.dims() != v.weights.dims()
            || p.bias.len() != g.bias.len()
            || p.bias.len() != v.bias.len()
        {
            return Err(shape_err!(
                "sgd: parameter {} vs gradient {}",
                p.weights.dims(),
                g.weights.dims()
            ));
        }
        for ((w, &gw), vw) in p
            .weights
            .data_mut()
            .iter_mut()
            .zip(g.weights.data())
            .zip(v.weights.data_mut())
        {
            update(w, gw, vw);
        }
        for ((b, &gb), vb) in p.bias.iter_mut().zip(&g.bias).zip(v.bias.iter_mut()) {
            update(b, gb, vb);
        }
    }
    state.steps += 1;
    Ok(())
}
