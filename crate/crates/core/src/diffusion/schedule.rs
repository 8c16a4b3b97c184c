use serde::{Deserialize, Serialize};

use crate::rng::{normal, Rng};
use crate::{Error, Result};

pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 1000;

/// Linear variance schedule; index `t - 1` holds step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<BetaSchedule> {
    if steps < 2 {
        return Err(Error::domain(format!("need at least 2 diffusion steps, got {steps}")));
    }
    if !(0.0 < beta_min && beta_min < beta_max && beta_max < 1.0) {
        return Err(Error::domain(format!("bad beta range [{beta_min}, {beta_max}]")));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(BetaSchedule { beta, alpha, alpha_bar })
}

impl Default for BetaSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, BETA_MIN, BETA_MAX).expect("default schedule")
    }
}

impl BetaSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::domain(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
    pub fn q_sample(&self, z0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        let i = self.check_step(t)?;
        if eps.len() != z0.len() {
            return Err(Error::shape(format!(
                "noise has {} entries, z0 {}",
                eps.len(),
                z0.len()
            )));
        }
        let (a, s) = (self.alpha_bar[i].sqrt(), (1.0 - self.alpha_bar[i]).sqrt());
        Ok(z0.iter().zip(eps).map(|(z, e)| a * z + s * e).collect())
    }

    /// Posterior mean from a noise estimate; `sqrt(beta_t)` noise is added
    /// for `t > 1` only.
    pub fn p_sample_step(&self, z_t: &[f64], t: usize, eps_hat: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let i = self.check_step(t)?;
        if eps_hat.len() != z_t.len() {
            return Err(Error::shape(format!(
                "noise has {} entries, z_t {}",
                eps_hat.len(),
                z_t.len()
            )));
        }
        let k = self.beta[i] / (1.0 - self.alpha_bar[i]).sqrt();
        let inv = 1.0 / self.alpha[i].sqrt();
        let sigma = if t > 1 { self.beta[i].sqrt() } else { 0.0 };
        Ok(z_t
            .iter()
            .zip(eps_hat)
            .map(|(z, e)| {
                let mean = inv * (z - k * e);
                if sigma > 0.0 {
                    mean + sigma * normal(rng)
                } else {
                    mean
                }
            })
            .collect())
    }
}
