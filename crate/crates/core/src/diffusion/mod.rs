//! Denoising diffusion over shape embeddings with class conditioning and
//! classifier-free guidance.

mod denoiser;
mod schedule;

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use denoiser::{
    denoiser_registry, Denoiser, DenoiserBackbone, DenoiserConfig, DenoiserFactory, ResMlpBackbone, UNet1dBackbone,
};
pub use schedule::{make_schedule, BetaSchedule, BETA_MAX, BETA_MIN, DEFAULT_STEPS};

use crate::aero::PerformanceClass;
use crate::autoencoder::ShapeEmbedding;
use crate::nn::{mse_loss, Adam, AdamConfig, Matrix, Parameterized};
use crate::rng::{normal, normal_vec, stream, Rng};
use crate::{Error, Result};

pub const DEFAULT_OMEGA: f64 = 3.0;
pub const DEFAULT_COND_DROPOUT: f64 = 0.1;

/// Chains evaluated together in one batched forward pass.
const CHAIN_BLOCK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionTrainConfig {
    pub cond_dropout: f64,
    pub lr: f64,
    pub batch: usize,
    pub iterations: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            cond_dropout: DEFAULT_COND_DROPOUT,
            lr: 1e-3,
            batch: 128,
            iterations: 20_000,
            beta_min: BETA_MIN,
            beta_max: BETA_MAX,
        }
    }
}

/// Per-dimension standardization of the training embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentNorm {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn fit(z: &Matrix) -> Result<Self> {
        if z.rows() < 2 {
            return Err(Error::domain("need at least two embeddings to standardize"));
        }
        let mean = z.mean_rows().into_vec();
        let n = z.rows() as f64;
        let std = (0..z.cols())
            .map(|j| {
                let v = (0..z.rows()).map(|i| (z[(i, j)] - mean[j]).powi(2)).sum::<f64>() / (n - 1.0);
                v.sqrt().max(1e-8)
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.rows(), z.cols(), |i, j| (z[(i, j)] - self.mean[j]) / self.std[j])
    }

    pub fn invert(&self, z: &[f64]) -> ShapeEmbedding {
        ShapeEmbedding(
            z.iter()
                .enumerate()
                .map(|(j, v)| v * self.std[j] + self.mean[j])
                .collect(),
        )
    }
}

/// Noise-prediction MSE and its parameter gradients for fixed draws.
pub fn loss_and_grad(
    den: &Denoiser,
    schedule: &BetaSchedule,
    z0: &Matrix,
    t: &[usize],
    cond: &[PerformanceClass],
    eps: &Matrix,
) -> Result<(f64, Denoiser)> {
    let mut zt = Matrix::zeros(z0.rows(), z0.cols());
    for i in 0..z0.rows() {
        let row = schedule.q_sample(z0.row(i), t[i], eps.row(i))?;
        zt.row_mut(i).copy_from_slice(&row);
    }
    let pred = den.forward(&zt, t, cond)?;
    let (loss, d) = mse_loss(&pred, eps)?;
    let mut grad = den.clone();
    grad.zero();
    den.backward(&zt, t, cond, &d, &mut grad)?;
    Ok((loss, grad))
}

/// One Adam step on a batch: uniform steps, standard normal noise, and
/// each label replaced by the null class with probability `cond_dropout`.
pub fn train_step(
    den: &mut Denoiser,
    adam: &mut Adam,
    schedule: &BetaSchedule,
    z0: &Matrix,
    labels: &[PerformanceClass],
    cond_dropout: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if labels.len() != z0.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} embeddings",
            labels.len(),
            z0.rows()
        )));
    }
    let n = z0.rows();
    let t: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=schedule.steps())).collect();
    let eps = Matrix::from_vec(n, z0.cols(), normal_vec(rng, n * z0.cols()))?;
    let cond: Vec<PerformanceClass> = labels
        .iter()
        .map(|&c| {
            if rng.gen::<f64>() < cond_dropout {
                PerformanceClass::Null
            } else {
                c
            }
        })
        .collect();
    let (loss, grad) = loss_and_grad(den, schedule, z0, &t, &cond, &eps)?;
    adam.step(den, &grad)?;
    Ok(loss)
}

/// `(1 + omega) eps(z, t, c) - omega eps(z, t, null)` for every row.
pub fn cfg_noise(den: &Denoiser, z_t: &Matrix, t: usize, class: PerformanceClass, omega: f64) -> Result<Matrix> {
    if class == PerformanceClass::Null {
        return Err(Error::domain("guidance needs a real class, got the null class"));
    }
    let n = z_t.rows();
    let steps = vec![t; n];
    if omega == 0.0 {
        return den.forward(z_t, &steps, &vec![class; n]);
    }
    let both = Matrix::vcat(&[z_t, z_t])?;
    let mut cond = vec![class; n];
    cond.extend(std::iter::repeat_n(PerformanceClass::Null, n));
    let e = den.forward(&both, &vec![t; 2 * n], &cond)?;
    let (ec, en) = (e.slice_rows(0, n), e.slice_rows(n, 2 * n));
    ec.zip_map(&en, |c, u| (1.0 + omega) * c - omega * u)
}

/// Ancestral sampling of `count` chains. Each chain draws from its own
/// stream of a seed taken from `rng`, so results do not depend on how
/// chains are grouped or scheduled. The null class samples the
/// unconditional model without guidance.
pub fn sample(
    den: &Denoiser,
    schedule: &BetaSchedule,
    class: PerformanceClass,
    omega: f64,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    if schedule.steps() != den.config.steps {
        return Err(Error::Config(format!(
            "schedule has {} steps, denoiser was built for {}",
            schedule.steps(),
            den.config.steps
        )));
    }
    let seed: u64 = rng.gen();
    let d = den.config.d_z;
    let starts: Vec<usize> = (0..count).step_by(CHAIN_BLOCK).collect();
    let blocks: Result<Vec<Vec<Vec<f64>>>> = starts
        .par_iter()
        .map(|&s| {
            let ids: Vec<usize> = (s..(s + CHAIN_BLOCK).min(count)).collect();
            let mut rngs: Vec<Rng> = ids.iter().map(|&i| stream(seed, i as u64)).collect();
            let mut z = Matrix::zeros(ids.len(), d);
            for (k, r) in rngs.iter_mut().enumerate() {
                for v in z.row_mut(k) {
                    *v = normal(r);
                }
            }
            for t in (1..=schedule.steps()).rev() {
                let eps = match class {
                    PerformanceClass::Null => {
                        den.forward(&z, &vec![t; ids.len()], &vec![PerformanceClass::Null; ids.len()])?
                    }
                    c => cfg_noise(den, &z, t, c, omega)?,
                };
                for (k, r) in rngs.iter_mut().enumerate() {
                    let next = schedule.p_sample_step(z.row(k), t, eps.row(k), r)?;
                    z.row_mut(k).copy_from_slice(&next);
                }
            }
            Ok((0..ids.len()).map(|k| z.row(k).to_vec()).collect())
        })
        .collect();
    Ok(blocks?.into_iter().flatten().collect())
}

/// Learning rate annealed from `lr` towards zero over `total` iterations.
pub fn cosine_lr(lr: f64, it: usize, total: usize) -> f64 {
    0.5 * lr * (1.0 + (std::f64::consts::PI * it as f64 / total.max(1) as f64).cos())
}

/// JSON sidecar stored next to the denoiser checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSidecar {
    pub denoiser: DenoiserConfig,
    pub train: DiffusionTrainConfig,
    pub norm: LatentNorm,
}

/// Denoiser, schedule and latent standardization used together.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub schedule: BetaSchedule,
    pub norm: LatentNorm,
    pub train: DiffusionTrainConfig,
}

impl DiffusionModel {
    pub fn new(rng: &mut Rng, denoiser: DenoiserConfig, train: DiffusionTrainConfig, norm: LatentNorm) -> Result<Self> {
        if norm.mean.len() != denoiser.d_z || norm.std.len() != denoiser.d_z {
            return Err(Error::shape("latent statistics do not match the latent size"));
        }
        Ok(Self {
            schedule: make_schedule(denoiser.steps, train.beta_min, train.beta_max)?,
            denoiser: Denoiser::new(rng, denoiser)?,
            norm,
            train,
        })
    }

    pub fn sidecar(&self) -> DiffusionSidecar {
        DiffusionSidecar {
            denoiser: self.denoiser.config.clone(),
            train: self.train.clone(),
            norm: self.norm.clone(),
        }
    }

    pub fn save(&self, ckpt: &Path, sidecar: &Path) -> Result<()> {
        crate::nn::save_checkpoint(ckpt, &self.denoiser)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(sidecar, json).map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(ckpt: &Path, sidecar: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let s: DiffusionSidecar = serde_json::from_str(&text)?;
        let mut m = Self::new(&mut stream(0, 0), s.denoiser, s.train, s.norm)?;
        crate::nn::load_checkpoint(ckpt, &mut m.denoiser)?;
        Ok(m)
    }

    pub fn optimizer(&self) -> Adam {
        Adam::for_model(
            AdamConfig {
                lr: self.train.lr,
                ..AdamConfig::default()
            },
            &self.denoiser,
        )
    }

    /// Trains on raw embeddings for the configured number of iterations with
    /// a cosine-annealed learning rate, calling `log(iteration, loss)` after every step.
    pub fn fit(
        &mut self,
        z: &Matrix,
        labels: &[PerformanceClass],
        rng: &mut Rng,
        mut log: impl FnMut(usize, f64),
    ) -> Result<()> {
        if z.rows() == 0 || labels.len() != z.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} embeddings",
                labels.len(),
                z.rows()
            )));
        }
        let zn = self.norm.apply(z);
        let mut adam = self.optimizer();
        let bs = self.train.batch.max(1);
        let iters = self.train.iterations;
        for it in 0..iters {
            adam.config.lr = cosine_lr(self.train.lr, it, iters);
            let idx: Vec<usize> = (0..bs).map(|_| rng.gen_range(0..z.rows())).collect();
            let batch = zn.select_rows(&idx);
            let lab: Vec<PerformanceClass> = idx.iter().map(|&i| labels[i]).collect();
            let loss = train_step(
                &mut self.denoiser,
                &mut adam,
                &self.schedule,
                &batch,
                &lab,
                self.train.cond_dropout,
                rng,
            )?;
            log(it, loss);
        }
        if !self.denoiser.is_finite() {
            return Err(Error::domain("diffusion training diverged"));
        }
        Ok(())
    }

    /// Embeddings in the autoencoder's latent space.
    pub fn sample(
        &self,
        class: PerformanceClass,
        omega: f64,
        count: usize,
        rng: &mut Rng,
    ) -> Result<Vec<ShapeEmbedding>> {
        Ok(sample(&self.denoiser, &self.schedule, class, omega, count, rng)?
            .iter()
            .map(|z| self.norm.invert(z))
            .collect())
    }
}

#[cfg(test)]
mod tests;
