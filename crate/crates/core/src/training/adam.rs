use crate::error::{AeclError, Result};
use crate::model::{ParameterSet, ENCODER_SIDE_TENSORS};

/// Which tensors an optimizer step touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    All,
    /// Projecting and attention networks only; clustering-head gradients
    /// are treated as zero.
    EncoderSide,
}

impl ParamScope {
    fn includes(self, tensor: usize) -> bool {
        match self {
            ParamScope::All => true,
            ParamScope::EncoderSide => tensor < ENCODER_SIDE_TENSORS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// Adam with bias correction and a single global step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: ParameterSet,
    pub second: ParameterSet,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            first: ParameterSet::zeros(params.dims),
            second: ParameterSet::zeros(params.dims),
            step: 0,
        }
    }
}

pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    lr: f64,
    config: &AdamConfig,
    scope: ParamScope,
) -> Result<()> {
    if grads.dims != params.dims || state.first.dims != params.dims {
        return Err(AeclError::ShapeMismatch(
            "optimizer state, gradients and parameters disagree".into(),
        ));
    }
    let AdamConfig { beta1, beta2, eps } = *config;
    state.step += 1;
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first.tensors_mut())
        .zip(state.second.tensors_mut())
        .enumerate();
    for (k, (((p, g), m), v)) in tensors {
        let active = scope.includes(k);
        for i in 0..p.len() {
            let g = if active { g[i] } else { 0.0 };
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
