use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::Result;

/// Heavy-ball SGD: `v <- mu * v + g; theta <- theta - eta * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

/// Optimizer hyperparameters as they appear in configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
        }
    }
}

impl OptimizerState {
    pub fn new(params: &ModelParams, cfg: SgdConfig) -> Self {
        Self {
            velocity: vec![0.0; params.len()],
            learning_rate: cfg.learning_rate,
            momentum: cfg.momentum,
            batch_size: cfg.batch_size.max(1),
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ModelParams, grad: &ModelParams) -> Result<()> {
        params.check_compatible(grad)?;
        let (mu, eta) = (self.momentum, self.learning_rate);
        for ((t, v), g) in params
            .as_mut_slice()
            .iter_mut()
            .zip(self.velocity.iter_mut())
            .zip(grad.as_slice())
        {
            *v = mu * *v + g;
            *t -= eta * *v;
        }
        Ok(())
    }
}

/// Functional form of [`OptimizerState::step`].
pub fn sgd_step(params: &ModelParams, grad: &ModelParams, opt: &mut OptimizerState) -> Result<ModelParams> {
    let mut next = params.clone();
    opt.step(&mut next, grad)?;
    Ok(next)
}

impl SgdConfig {
    pub fn state_for(&self, params: &ModelParams) -> OptimizerState {
        OptimizerState::new(params, *self)
    }
}
