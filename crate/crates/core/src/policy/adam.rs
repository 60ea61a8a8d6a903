use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
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

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub cfg: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step that descends `grad`.
pub fn adam_step<T: Scalar>(params: &mut [T], grad: &[T], state: &mut AdamState<T>, lr: T) {
    assert_eq!(params.len(), grad.len(), "gradient/parameter length");
    assert_eq!(params.len(), state.m.len(), "optimizer state length");
    state.t += 1;
    let b1 = T::lit(state.cfg.beta1);
    let b2 = T::lit(state.cfg.beta2);
    let eps = T::lit(state.cfg.eps);
    let one = T::one();
    let t = state.t as i32;
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
