//! Stochastic gradient descent with inverse-time decay and (Nesterov) momentum.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Inverse-time discount: step `t` uses `learning_rate / (1 + decay * t)`.
    pub decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

impl OptimizerConfig {
    /// Fine-tuning values: lr 1e-5, decay 1e-6, Nesterov momentum 0.9.
    pub fn paper() -> Self {
        OptimizerConfig {
            learning_rate: 1e-5,
            decay: 1e-6,
            momentum: 0.9,
            nesterov: true,
        }
    }

    /// From-scratch desk-scale values; 1e-5 stalls a freshly initialized small net.
    pub fn desk() -> Self {
        OptimizerConfig {
            learning_rate: 1e-2,
            decay: 1e-4,
            momentum: 0.9,
            nesterov: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::Config(format!(
                "optimizer.decay must be >= 0, got {}",
                self.decay
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "optimizer.momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }

    /// Effective learning rate at 0-based step `t`.
    pub fn rate_at(&self, step_index: u64) -> f64 {
        self.learning_rate / (1.0 + self.decay * step_index as f64)
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Applies one update in place.
///
/// `v ← μ·v − lr_t·g`; classic momentum adds `v`, Nesterov adds `μ·v − lr_t·g`
/// (the look-ahead form evaluated with the freshly updated buffer).
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Gradients,
    opt: &OptimizerConfig,
    step_index: u64,
) -> Result<()> {
    grads.check_congruent(params)?;
    let lr = opt.rate_at(step_index);
    let mu = opt.momentum;
    for (entry, g) in params.entries_mut().iter_mut().zip(grads.tensors()) {
        if entry.frozen {
            continue;
        }
        let v = entry.velocity.data_mut();
        let p = entry.value.data_mut();
        for ((pi, vi), &gi) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *vi = mu * *vi - lr * gi;
            if opt.nesterov {
                *pi += mu * *vi - lr * gi;
            } else {
                *pi += *vi;
            }
        }
    }
    Ok(())
}
