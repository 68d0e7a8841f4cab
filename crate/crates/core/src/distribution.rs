use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Tolerance on the total mass of a distribution.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Normalized next-token probabilities over the whole vocabulary.
///
/// `residual` is the mass a remote backend reported outside its top-K list
/// and which was spread uniformly over the unlisted tokens; it is zero for
/// in-process backends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    probs: Vec<f64>,
    #[serde(default)]
    residual: f64,
}

impl TokenDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_residual(probs, 0.0)
    }

    pub fn with_residual(probs: Vec<f64>, residual: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Vocab("distribution over an empty vocabulary".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Data(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Data(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs, residual })
    }

    /// Normalize non-negative weights.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Data("weights must have positive finite mass".into()));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Numerically stable softmax.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::from_weights(logits.iter().map(|l| (l - max).exp()).collect())
    }

    pub fn one_hot(len: usize, id: TokenId) -> Self {
        let mut probs = vec![0.0; len];
        probs[id] = 1.0;
        Self { probs, residual: 0.0 }
    }

    pub fn uniform(len: usize) -> Self {
        Self { probs: vec![1.0 / len as f64; len], residual: 0.0 }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, id: TokenId) -> f64 {
        self.probs.get(id).copied().unwrap_or(0.0)
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn is_truncated(&self) -> bool {
        self.residual > 0.0
    }

    /// Most probable token; ties resolve to the lowest id and are reported.
    pub fn argmax(&self) -> (TokenId, bool) {
        let mut best = 0;
        let mut tie = false;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
                tie = false;
            } else if p == self.probs[best] {
                tie = true;
            }
        }
        (best, tie)
    }
}
