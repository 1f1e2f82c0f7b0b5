use serde::{Deserialize, Serialize};

use crate::error::{ClaireError, Result};
use crate::numerics::Matrix;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Weights of the joint objective
/// `recon + lambda * latent + alpha * clf + beta * ent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha: f64,
    /// Signed: a negative value rewards prediction entropy.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            alpha: 1.0,
            beta: 0.01,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda: 0.0,
        alpha: 0.0,
        beta: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ClaireError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ClaireError::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !self.beta.is_finite() {
            return Err(ClaireError::Config(format!("beta must be finite, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Unweighted loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub latent: f64,
    pub clf: f64,
    pub ent: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 4] {
        [
            ("l_recon", self.recon),
            ("l_latent", self.latent),
            ("l_clf", self.clf),
            ("l_ent", self.ent),
        ]
    }
}

/// Mean over rows of the squared Euclidean reconstruction error.
pub fn loss_reconstruction(x: &Matrix, x_hat: &Matrix) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(ClaireError::Shape {
            op: "loss_reconstruction",
            left: x.shape(),
            right: x_hat.shape(),
        });
    }
    if x.rows() == 0 {
        return Err(ClaireError::EmptyInput("reconstruction loss of an empty batch".into()));
    }
    let sq: f64 = x
        .as_slice()
        .iter()
        .zip(x_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / x.rows() as f64)
}

/// Mean over latent units of the population variance across the batch.
/// Zero for an empty batch.
pub fn loss_latent_variance(z: &Matrix) -> f64 {
    let (n, k) = z.shape();
    if n == 0 || k == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for j in 0..k {
        let col = z.column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        total += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    }
    total / k as f64
}

/// Mean binary cross-entropy of labels `y` in {0,1} against probabilities.
pub fn loss_classification(y: &[u8], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(ClaireError::Shape {
            op: "loss_classification",
            left: (y.len(), 1),
            right: (y_hat.len(), 1),
        });
    }
    if y.is_empty() {
        return Err(ClaireError::EmptyInput("classification loss of an empty batch".into()));
    }
    let s: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&t, &p)| {
            let p = clamp_prob(p);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(s / y.len() as f64)
}

/// Mean binary entropy of the predictions, in `[0, ln 2]`.
pub fn loss_entropy(y_hat: &[f64]) -> f64 {
    if y_hat.is_empty() {
        return 0.0;
    }
    let s: f64 = y_hat
        .iter()
        .map(|&p| {
            let p = clamp_prob(p);
            -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
        })
        .sum();
    s / y_hat.len() as f64
}

/// Weighted objective. Fails on the first non-finite term, naming it.
pub fn total_loss(parts: &LossBreakdown, weights: &LossWeights) -> Result<f64> {
    for (term, value) in parts.terms() {
        if !value.is_finite() {
            return Err(ClaireError::NonFinite { term, value });
        }
    }
    Ok(parts.recon + weights.lambda * parts.latent + weights.alpha * parts.clf + weights.beta * parts.ent)
}
