use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coefficient of the L2 penalty, folded into the gradient.
    pub l2_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2_decay: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = |t: &Tensor| Tensor {
            shape: t.shape.clone(),
            data: alloc::vec![0.0; t.numel()],
        };
        AdamState {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam descent step on `params`.
///
/// `grads` are gradients of the quantity being minimized. The L2 term
/// `l2_decay * param` is added to each gradient before the moment updates.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: alloc::vec![params.len()],
            rhs: alloc::vec![grads.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.numel() != g.numel() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape.clone(),
                rhs: g.shape.clone(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for j in 0..p.data.len() {
            let grad = g.data[j] + cfg.l2_decay * p.data[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad * grad;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.data[j] -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// Exponentially decayed learning rate `lr0 * rate^iter`.
pub fn lr_schedule(lr0: f64, rate: f64, iter: usize) -> f64 {
    lr0 * libm::pow(rate, iter as f64)
}
