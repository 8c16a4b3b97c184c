use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a flattened parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn for_model(config: AdamConfig, model: &impl Parameterized) -> Self {
        Self::new(config, model.num_params())
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates `params` in place with gradients `grads`. Entries with zero
    /// gradient and zero history are left exactly unchanged.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state for {} parameters got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
        Ok(())
    }

    pub fn step<P: Parameterized>(&mut self, model: &mut P, grads: &P) -> Result<()> {
        let g = grads.flatten();
        let mut p = model.flatten();
        self.step_slice(&mut p, &g)?;
        model.load_flat(&p)
    }
}
