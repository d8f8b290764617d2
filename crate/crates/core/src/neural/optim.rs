use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;
use super::{real, Real};
use crate::error::{Error, Result};

/// Cosine annealing from `lr_max` at `t = 0` to `lr_min` at `t = total`.
pub fn cosine_lr(t: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let progress = t.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state, flattened in the parameter visiting
/// order of [`ModelParams::for_each_tensor`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub step: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub lr: f64,
    pub adam: AdamConfig,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: &ModelParams<T>, adam: AdamConfig) -> Self {
        let mut len = 0;
        params.for_each_tensor(|_, t| len += t.len());
        Self {
            step: 0,
            first_moment: vec![T::zero(); len],
            second_moment: vec![T::zero(); len],
            lr: 0.0,
            adam,
        }
    }
}

/// One bias-corrected adaptive-moment update with step size `lr`.
pub fn optimizer_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut TrainState<T>,
    lr: f64,
) -> Result<()> {
    let mut flat = Vec::with_capacity(state.first_moment.len());
    grads.for_each_tensor(|_, t| flat.extend_from_slice(t));
    if flat.len() != state.first_moment.len() {
        return Err(Error::Shape {
            op: "optimizer_step",
            detail: format!("{} gradients for {} moments", flat.len(), state.first_moment.len()),
        });
    }

    state.step += 1;
    state.lr = lr;
    let AdamConfig { beta1, beta2, eps } = state.adam;
    let (b1, b2) = (real::<T>(beta1), real::<T>(beta2));
    let one = T::one();
    let c1 = real::<T>(1.0 - beta1.powi(state.step as i32));
    let c2 = real::<T>(1.0 - beta2.powi(state.step as i32));
    let (lr, eps) = (real::<T>(lr), real::<T>(eps));

    let (m, v) = (&mut state.first_moment, &mut state.second_moment);
    let mut offset = 0;
    params.for_each_tensor_mut(|tensor| {
        for (k, w) in tensor.iter_mut().enumerate() {
            let i = offset + k;
            let g = flat[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        offset += tensor.len();
    });
    Ok(())
}
