use serde::{Deserialize, Serialize};

use super::{Gradients, NetworkParams};
use crate::error::{ClaireError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
///
/// The step is `theta -= lr * m / (sqrt(v) + eps)` with raw, uncorrected
/// moments, so early steps are smaller than in bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, tensor_lengths: &[usize]) -> Self {
        Self {
            config,
            m: tensor_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: tensor_lengths.iter().map(|&n| vec![0.0; n]).collect(),
            steps: 0,
        }
    }

    pub fn for_params(config: AdamConfig, params: &NetworkParams) -> Self {
        let lengths: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(config, &lengths)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Updates the moments, then every parameter, in tensor order.
    pub fn update(&mut self, mut params: Vec<&mut [f64]>, grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(ClaireError::Shape {
                op: "adam_step",
                left: (params.len(), 0),
                right: (grads.len(), 0),
            });
        }
        for (t, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[t].len() || g.len() != p.len() {
                return Err(ClaireError::Shape {
                    op: "adam_step",
                    left: (t, p.len()),
                    right: (t, g.len()),
                });
            }
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        for (t, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[t], &mut self.v[t], &grads[t]);
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= learning_rate * m[i] / (v[i].sqrt() + epsilon);
            }
        }
        self.steps += 1;
        Ok(())
    }
}

pub fn adam_step(adam: &mut AdamState, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
    adam.update(params.tensors_mut(), &grads.tensors)
}
