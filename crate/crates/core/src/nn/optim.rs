use serde::{Deserialize, Serialize};

use super::model::{Gradient, ModelState};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            weight_decay: 0.001,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SimError::config(format!("{prefix}.learning_rate"), "must be > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(SimError::config(format!("{prefix}.weight_decay"), "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(SimError::config(format!("{prefix}.batch_size"), "must be >= 1"));
        }
        Ok(())
    }
}

/// Plain SGD with coupled weight decay: `w' = w - lr·(g + wd·w)`.
pub fn sgd_step(model: &ModelState, grad: &Gradient, cfg: &OptimizerConfig) -> Result<ModelState> {
    let mut next = model.clone();
    sgd_step_in_place(&mut next, grad, cfg)?;
    Ok(next)
}

pub fn sgd_step_in_place(model: &mut ModelState, grad: &Gradient, cfg: &OptimizerConfig) -> Result<()> {
    model.check_congruent(grad.tensors().map(|g| g.shape().to_vec()), "sgd_step")?;
    let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);
    for (w, g) in model.tensors_mut().zip(grad.tensors()) {
        for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
            *wi -= lr * (gi + wd * *wi);
        }
    }
    Ok(())
}
