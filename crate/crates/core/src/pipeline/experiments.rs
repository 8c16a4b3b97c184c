use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DiffusionConfig, RvqTrainConfig};
use super::dataset::{round_trip_chamfer, DatasetRecord};
use crate::aero::{classify, eval_surrogate, AeroLabel, ClassGrid, PerformanceClass, REYNOLDS};
use crate::autoencoder::{AeConfig, AeLosses, AeSample, AutoEncoder, MetaQuantizer, ShapeEmbedding};
use crate::csrep::Targets;
use crate::diffusion::{DiffusionModel, LatentNorm};
use crate::geometry::{resample_arclength, sweep_envelope, CsRep, Point2, Profile};
use crate::metrics::{hausdorff, PointSet};
use crate::nn::{gather_neighbors, load_checkpoint, save_checkpoint, Matrix, RvqConfig, RvqLosses, RvqModel};
use crate::rng::{stream, Rng};
use crate::{Error, Result};

/// Random neighbourhood rows drawn from the given profiles.
pub fn neighborhood_rows(records: &[&DatasetRecord], k: usize, rows: usize, rng: &mut Rng) -> Result<Matrix> {
    if records.is_empty() {
        return Err(Error::domain("no profiles to sample neighbourhoods from"));
    }
    let picks: Vec<(usize, usize)> = (0..rows)
        .map(|_| {
            let r = rng.gen_range(0..records.len());
            (r, rng.gen_range(0..records[r].profile.len()))
        })
        .collect();
    let mut out = Matrix::zeros(rows, 2 * k);
    let mut cache: std::collections::HashMap<usize, Matrix> = std::collections::HashMap::new();
    for (i, &(r, p)) in picks.iter().enumerate() {
        if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(r) {
            e.insert(gather_neighbors(&records[r].profile()?, k)?);
        }
        out.row_mut(i).copy_from_slice(cache[&r].row(p));
    }
    Ok(out)
}

/// Trains the neighbourhood tokenizer on freshly drawn rows each epoch.
pub fn train_rvq(
    cfg: &RvqTrainConfig,
    records: &[&DatasetRecord],
    rng: &mut Rng,
    mut log: impl FnMut(usize, &RvqLosses),
) -> Result<RvqModel> {
    let mut model = RvqModel::new(rng, cfg.model.clone())?;
    let k = cfg.model.k_neighbors;
    let init = neighborhood_rows(records, k, cfg.rows_per_epoch.max(cfg.model.codes), rng)?;
    model.init_codebook(&init, rng)?;
    let mut adam = model.optimizer();
    for epoch in 0..cfg.epochs {
        let data = neighborhood_rows(records, k, cfg.rows_per_epoch, rng)?;
        let l = model.train_epoch(&data, &mut adam, rng)?;
        log(epoch, &l);
    }
    Ok(model)
}

pub fn save_rvq(model: &RvqModel, ckpt: &Path, sidecar: &Path) -> Result<()> {
    save_checkpoint(ckpt, model)?;
    let json = serde_json::to_string_pretty(&model.config)?;
    std::fs::write(sidecar, json).map_err(|e| Error::io(sidecar, e))
}

pub fn load_rvq(ckpt: &Path, sidecar: &Path) -> Result<RvqModel> {
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let cfg: RvqConfig = serde_json::from_str(&text)?;
    let mut model = RvqModel::new(&mut stream(0, 0), cfg)?;
    load_checkpoint(ckpt, &mut model)?;
    Ok(model)
}

/// Autoencoder inputs and targets of each record.
pub fn ae_samples(rvq: &RvqModel, records: &[&DatasetRecord]) -> Result<Vec<AeSample>> {
    records
        .par_iter()
        .map(|r| {
            Ok(AeSample {
                tokens: rvq.tokens(&r.profile()?)?,
                meta: r.targets.meta,
                rep: r.csrep.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: AeLosses,
    pub val: Option<AeLosses>,
}

/// Fits the meta quantizer to the training targets and trains for
/// `cfg.epochs`; `log` sees the initial losses as epoch 0.
#[allow(clippy::too_many_arguments)]
pub fn train_autoencoder(
    cfg: &AeConfig,
    train: &[AeSample],
    val: &[AeSample],
    d_code: usize,
    profile_len: usize,
    delta_x: f64,
    rng: &mut Rng,
    mut log: impl FnMut(&EpochLog),
) -> Result<AutoEncoder> {
    let quantizer = MetaQuantizer::fit(train.iter().map(|s| &s.meta), cfg.bins)?;
    let mut ae = AutoEncoder::new(rng, cfg.clone(), quantizer, d_code, profile_len, delta_x)?;
    let val_loss = |ae: &AutoEncoder| -> Result<Option<AeLosses>> {
        if val.is_empty() {
            Ok(None)
        } else {
            ae.mean_loss(val).map(Some)
        }
    };
    log(&EpochLog {
        epoch: 0,
        train: ae.mean_loss(train)?,
        val: val_loss(&ae)?,
    });
    let mut adam = ae.optimizer();
    for epoch in 1..=cfg.epochs {
        let l = ae.train_epoch(train, &mut adam, rng)?;
        log(&EpochLog {
            epoch,
            train: l,
            val: val_loss(&ae)?,
        });
    }
    Ok(ae)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub count: usize,
    pub mean_chamfer: f64,
    pub median_chamfer: f64,
    pub max_chamfer: f64,
    pub mean_hausdorff: f64,
}

/// Profile distances between records and their autoencoder reconstructions.
pub fn reconstruction_report(
    ae: &AutoEncoder,
    samples: &[AeSample],
    records: &[&DatasetRecord],
) -> Result<ReconReport> {
    if samples.is_empty() || samples.len() != records.len() {
        return Err(Error::shape("need one sample per record"));
    }
    let d: Vec<(f64, f64)> = samples
        .par_iter()
        .zip(records.par_iter())
        .map(|(s, r)| {
            let z = ae.encode(&s.tokens)?;
            let (_, _, rep) = ae.decode(&z)?;
            let prof = r.profile()?;
            let back = resample_arclength(&sweep_envelope(&rep)?, prof.len())?;
            Ok((
                round_trip_chamfer(&prof, &rep)?,
                hausdorff(&PointSet::from(&back), &PointSet::from(&prof))?,
            ))
        })
        .collect::<Result<_>>()?;
    let mut ch: Vec<f64> = d.iter().map(|x| x.0).collect();
    ch.sort_by(f64::total_cmp);
    let n = ch.len() as f64;
    Ok(ReconReport {
        count: ch.len(),
        mean_chamfer: ch.iter().sum::<f64>() / n,
        median_chamfer: ch[ch.len() / 2],
        max_chamfer: ch[ch.len() - 1],
        mean_hausdorff: d.iter().map(|x| x.1).sum::<f64>() / n,
    })
}

/// One embedding row per sample.
pub fn embed(ae: &AutoEncoder, samples: &[AeSample]) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| Ok(ae.encode(&s.tokens)?.0))
        .collect::<Result<_>>()?;
    let refs: Vec<Matrix> = rows.into_iter().map(|r| Matrix::row_vector(&r)).collect();
    Matrix::vcat(&refs.iter().collect::<Vec<_>>())
}

/// Standardizes the embeddings and trains the conditional denoiser.
pub fn train_diffusion(
    cfg: &DiffusionConfig,
    z: &Matrix,
    labels: &[PerformanceClass],
    rng: &mut Rng,
    log: impl FnMut(usize, f64),
) -> Result<DiffusionModel> {
    let mut dm = DiffusionModel::new(rng, cfg.denoiser.clone(), cfg.train.clone(), LatentNorm::fit(z)?)?;
    dm.fit(z, labels, rng, log)?;
    Ok(dm)
}

/// A decoded sample with its surrogate label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub class: PerformanceClass,
    pub z: ShapeEmbedding,
    pub targets: Targets,
    pub csrep: CsRep,
    pub profile: Vec<Point2>,
    pub label: AeroLabel,
}

pub fn decode_embeddings(
    ae: &AutoEncoder,
    zs: Vec<ShapeEmbedding>,
    class: PerformanceClass,
    profile_len: usize,
) -> Result<Vec<Generated>> {
    zs.into_par_iter()
        .map(|z| {
            let (meta, coeffs, csrep) = ae.decode(&z)?;
            let profile = resample_arclength(&sweep_envelope(&csrep)?, profile_len)?;
            Ok(Generated {
                class,
                label: eval_surrogate(&csrep, REYNOLDS)?,
                z,
                targets: Targets { meta, coeffs },
                csrep,
                profile: profile.points,
            })
        })
        .collect()
}

pub fn generate(
    ae: &AutoEncoder,
    dm: &DiffusionModel,
    class: PerformanceClass,
    omega: f64,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<Generated>> {
    let zs = dm.sample(class, omega, count, rng)?;
    decode_embeddings(ae, zs, class, ae.encoder.seq_len())
}

impl Generated {
    pub fn profile(&self) -> Result<Profile> {
        Profile::new(self.profile.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class_id: usize,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub target: usize,
    pub cl: f64,
    pub cd: f64,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalReport {
    pub omega: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub mean: f64,
    pub worst: f64,
    pub points: Vec<ScatterPoint>,
}

/// Samples `per_class` shapes for every grid class and scores how many
/// land in their target class.
pub fn run_conditional_eval(
    ae: &AutoEncoder,
    dm: &DiffusionModel,
    grid: &ClassGrid,
    per_class: usize,
    omega: f64,
    rng: &mut Rng,
) -> Result<ConditionalReport> {
    if per_class == 0 {
        return Err(Error::domain("need at least one sample per class"));
    }
    let mut per = Vec::new();
    let mut points = Vec::new();
    for c in 0..grid.num_classes() {
        let class = PerformanceClass::Id(c);
        let gen = generate(ae, dm, class, omega, per_class, rng)?;
        let mut hits = 0;
        for g in &gen {
            let hit = classify(g.label, grid) == class;
            hits += usize::from(hit);
            points.push(ScatterPoint {
                target: c,
                cl: g.label.cl,
                cd: g.label.cd,
                hit,
            });
        }
        per.push(ClassAccuracy {
            class_id: c,
            count: gen.len(),
            accuracy: hits as f64 / gen.len() as f64,
        });
    }
    let mean = per.iter().map(|c| c.accuracy).sum::<f64>() / per.len() as f64;
    let worst = per.iter().map(|c| c.accuracy).fold(f64::INFINITY, f64::min);
    Ok(ConditionalReport {
        omega,
        per_class: per,
        mean,
        worst,
        points,
    })
}

pub fn scatter_csv(report: &ConditionalReport) -> String {
    let mut s = String::from("target,cl,cd,hit\n");
    for p in &report.points {
        s.push_str(&format!("{},{:.9e},{:.9e},{}\n", p.target, p.cl, p.cd, u8::from(p.hit)));
    }
    s
}

pub fn accuracy_csv(reports: &[&ConditionalReport]) -> String {
    let mut s = String::from("omega,class_id,count,accuracy\n");
    for r in reports {
        for c in &r.per_class {
            s.push_str(&format!("{},{},{},{:.6}\n", r.omega, c.class_id, c.count, c.accuracy));
        }
        s.push_str(&format!(
            "{},mean,,{:.6}\n{},worst,,{:.6}\n",
            r.omega, r.mean, r.omega, r.worst
        ));
    }
    s
}
