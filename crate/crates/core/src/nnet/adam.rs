use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::{Gradients, ModelParams};
use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| alloc::vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| alloc::vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_model(config: AdamConfig, params: &ModelParams<T>) -> Self {
        let sizes: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
        Self::new(config, &sizes)
    }

    /// One bias-corrected update of every tensor in `params`.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape("optimizer tensor count mismatch".into()));
        }
        for i in 0..params.len() {
            if params[i].len() != self.m[i].len() || grads[i].len() != self.m[i].len() {
                return Err(Error::Shape(alloc::format!("optimizer tensor {i} has the wrong size")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let step_size = T::of(c.lr / (1.0 - libm::pow(c.beta1, t)));
        let v_scale = T::of(1.0 / libm::sqrt(1.0 - libm::pow(c.beta2, t)));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (r1, r2) = (T::one() - b1, T::one() - b2);
        let eps = T::of(c.epsilon);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + r1 * gi;
                v[i] = b2 * v[i] + r2 * gi * gi;
                // lr * m_hat / (sqrt(v_hat) + eps)
                p[i] -= step_size * m[i] / (v[i].sqrt() * v_scale + eps);
            }
        }
        Ok(())
    }
}

/// Adam update of every trainable tensor followed by the spatial-filter
/// max-norm projection.
pub fn adam_step<T: Real>(params: &mut ModelParams<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<()> {
    let g: Vec<&[T]> = grads.values.iter().map(|v| v.as_slice()).collect();
    state.update(&mut params.trainable_mut(), &g)?;
    params.apply_max_norm(1.0);
    Ok(())
}
