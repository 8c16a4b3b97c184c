use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::AeConfig;
use crate::diffusion::{DenoiserConfig, DiffusionTrainConfig, DEFAULT_OMEGA};
use crate::geometry::{DEFAULT_DELTA_X, DEFAULT_PROFILE_LEN};
use crate::nn::RvqConfig;
use crate::{Error, Result};

/// Inclusive evenly spaced values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Range {
    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            c => (0..c)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (c - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// NACA 4-digit maximum camber, camber position and thickness sweeps.
    pub naca4_m: Range,
    pub naca4_p: Range,
    pub naca4_t: Range,
    /// NACA 5-digit design-lift digits, position digits and thicknesses (%).
    pub naca5_design: Vec<u32>,
    pub naca5_position: Vec<u32>,
    pub naca5_reflex: bool,
    pub naca5_thickness: Vec<u32>,
    pub delta_x: f64,
    pub profile_len: usize,
    /// Records whose cs-rep round trip exceeds this chamfer distance are dropped.
    pub max_round_trip: f64,
    pub grid_bins: usize,
    pub split: [f64; 3],
    pub gzip: bool,
}

impl DatasetConfig {
    fn full() -> Self {
        Self {
            naca4_m: Range::new(0.0, 0.09, 46),
            naca4_p: Range::new(0.1, 0.7, 25),
            naca4_t: Range::new(0.05, 0.3, 26),
            naca5_design: vec![1, 2, 3, 4, 5, 6],
            naca5_position: vec![1, 2, 3, 4, 5],
            naca5_reflex: true,
            naca5_thickness: (6..=30).collect(),
            delta_x: DEFAULT_DELTA_X,
            profile_len: DEFAULT_PROFILE_LEN,
            max_round_trip: 5e-3,
            grid_bins: 5,
            split: [0.9, 0.05, 0.05],
            gzip: true,
        }
    }

    fn desk() -> Self {
        Self {
            naca4_m: Range::new(0.0, 0.06, 13),
            naca4_p: Range::new(0.2, 0.6, 9),
            naca4_t: Range::new(0.06, 0.18, 25),
            naca5_design: vec![1, 2, 3],
            naca5_position: vec![2, 3, 4],
            naca5_reflex: false,
            naca5_thickness: (8..=18).step_by(2).collect(),
            grid_bins: 3,
            gzip: false,
            ..Self::full()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub factor: f64,
    /// Jitter of spine heights and slopes, in units of `delta_x`.
    pub meta_jitter: f64,
    /// Relative jitter of the nose and peak radii.
    pub radius_jitter: f64,
    /// Uniform half-width added to each coefficient.
    pub coeff_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            factor: 1.0,
            meta_jitter: 0.05,
            radius_jitter: 0.05,
            coeff_jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RvqTrainConfig {
    pub model: RvqConfig,
    pub epochs: usize,
    /// Neighbourhood rows drawn per epoch.
    pub rows_per_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub denoiser: DenoiserConfig,
    pub train: DiffusionTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub per_class: usize,
    pub omega: f64,
    /// Guidance weight of the comparison run.
    pub baseline_omega: f64,
    /// Held-out records used for reconstruction metrics (0 = all).
    pub reconstruct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub targets: usize,
    pub budget: usize,
    pub tol: f64,
    /// Cosine modes per coefficient channel in the search space.
    pub basis: usize,
    pub omega: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            targets: 20,
            budget: 200,
            tol: 2e-3,
            basis: 3,
            omega: DEFAULT_OMEGA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub augment: AugmentConfig,
    pub rvq: RvqTrainConfig,
    pub ae: AeConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalConfig,
    pub optimize: OptimizeConfig,
}

impl PipelineConfig {
    pub fn full() -> Self {
        Self {
            preset: Preset::Full,
            seed: 0,
            dataset: DatasetConfig::full(),
            augment: AugmentConfig {
                factor: 8.0,
                ..AugmentConfig::default()
            },
            rvq: RvqTrainConfig {
                model: RvqConfig::default(),
                epochs: 50,
                rows_per_epoch: 200_000,
            },
            ae: AeConfig::default(),
            diffusion: DiffusionConfig {
                denoiser: DenoiserConfig {
                    classes: 25,
                    ..DenoiserConfig::default()
                },
                train: DiffusionTrainConfig::default(),
            },
            eval: EvalConfig {
                per_class: 1024 / 25 + 1,
                omega: DEFAULT_OMEGA,
                baseline_omega: 0.0,
                reconstruct: 0,
            },
            optimize: OptimizeConfig::default(),
        }
    }

    /// Single-core scale: a few thousand records and minutes of training.
    pub fn desk() -> Self {
        let full = Self::full();
        Self {
            preset: Preset::Desk,
            dataset: DatasetConfig::desk(),
            augment: AugmentConfig::default(),
            rvq: RvqTrainConfig {
                model: RvqConfig::default(),
                epochs: 8,
                rows_per_epoch: 20_000,
            },
            ae: AeConfig {
                lr: 1e-3,
                batch: 32,
                epochs: 80,
                meta_hidden: 128,
                ..AeConfig::default()
            },
            diffusion: DiffusionConfig {
                denoiser: DenoiserConfig {
                    classes: 9,
                    hidden: 64,
                    blocks: 2,
                    steps: 200,
                    ..DenoiserConfig::default()
                },
                train: DiffusionTrainConfig {
                    iterations: 8000,
                    ..DiffusionTrainConfig::default()
                },
            },
            eval: EvalConfig {
                per_class: 128,
                reconstruct: 0,
                ..full.eval
            },
            ..full
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    /// TOML overrides on top of the preset named by the `preset` key
    /// (desk when absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let over: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let preset = match over.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("preset: {e}")))?,
        };
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(format!("{e}")))?;
        let merged = merge(base, over);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = &self.dataset;
        if !(d.delta_x > 0.0 && d.delta_x < 0.5) {
            return bad(format!("dataset.delta_x {} out of range", d.delta_x));
        }
        if d.profile_len < 16 {
            return bad(format!("dataset.profile_len {} too small", d.profile_len));
        }
        if d.grid_bins < 1 {
            return bad("dataset.grid_bins must be positive".into());
        }
        if d.split.iter().any(|&s| s < 0.0) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("dataset.split {:?} must be non-negative and sum to 1", d.split));
        }
        if self.diffusion.denoiser.classes != d.grid_bins * d.grid_bins {
            return bad(format!(
                "diffusion.denoiser.classes = {} but the grid has {} cells",
                self.diffusion.denoiser.classes,
                d.grid_bins * d.grid_bins
            ));
        }
        if self.diffusion.denoiser.d_z != self.ae.d_z {
            return bad("diffusion.denoiser.d_z must equal ae.d_z".into());
        }
        if !(0.0..=1.0).contains(&self.diffusion.train.cond_dropout) {
            return bad("diffusion.train.cond_dropout must be a probability".into());
        }
        if self.optimize.budget == 0 || self.optimize.tol <= 0.0 {
            return bad("optimize.budget and optimize.tol must be positive".into());
        }
        Ok(())
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
