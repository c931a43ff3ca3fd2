//! AdamW with optional AMSGrad and global gradient-norm clipping.

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::nn::{Gradients, Params, TensorKind};

/// Moment estimates mirroring the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState {
    pub m: Params,
    pub v: Params,
    /// Running maximum of the bias-corrected second moment (AMSGrad).
    pub v_hat_max: Params,
    pub t: u64,
}

impl AdamWState {
    pub fn new(params: &Params) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            v_hat_max: params.zeros_like(),
            t: 0,
        }
    }
}

/// Scales every gradient by `max_norm / N` when the joint norm `N` exceeds
/// `max_norm`. Returns `N`.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Updates one tensor in place for optimizer step `t` (1-based).
#[allow(clippy::too_many_arguments)]
pub fn adamw_update_tensor(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    v_hat_max: &mut [f64],
    t: u64,
    cfg: &TrainConfig,
    decay: bool,
) {
    let bc1 = 1.0 - cfg.beta1.powf(t as f64);
    let bc2 = 1.0 - cfg.beta2.powf(t as f64);
    let lr = cfg.learning_rate;
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for i in 0..p.len() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let mut v_hat = v[i] / bc2;
        if cfg.amsgrad {
            v_hat = v_hat.max(v_hat_max[i]);
            v_hat_max[i] = v_hat;
        }
        p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + cfg.epsilon) - lr * wd * p[i];
    }
}

/// One AdamW step over every tensor. Weight decay skips bias vectors.
pub fn adamw_step(params: &mut Params, grads: &Gradients, state: &mut AdamWState, cfg: &TrainConfig) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Consistency("optimizer state, gradients and parameters differ in shape".into()));
    }
    state.t += 1;
    let t = state.t;
    let AdamWState { m, v, v_hat_max, .. } = state;
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m.tensors_mut())
        .zip(v.tensors_mut())
        .zip(v_hat_max.tensors_mut());
    for (((((p, kind), (g, _)), (m, _)), (v, _)), (vm, _)) in tensors {
        adamw_update_tensor(p, g, m, v, vm, t, cfg, kind == TensorKind::Weight);
    }
    Ok(())
}
