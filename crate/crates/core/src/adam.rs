// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::decoder::DecoderParameters;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for Adam, laid out like the parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &DecoderParameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam descent step `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(
    params: &mut DecoderParameters,
    grads: &DecoderParameters,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.shape() != params.shape() || state.m.len() != params.tensors().len() {
        return Err(Error::InvalidConfig("Adam state does not match parameters".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite(format!(
            "decoder gradient at Adam step {}",
            state.step + 1
        )));
    }
    state.step += 1;
    let bias1 = 1.0 - BETA1.powi(state.step as i32);
    let bias2 = 1.0 - BETA2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
