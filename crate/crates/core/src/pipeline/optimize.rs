use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::OptimizeConfig;
use crate::aero::{classify, eval_surrogate, AeroLabel, ClassGrid, REYNOLDS};
use crate::autoencoder::AutoEncoder;
use crate::csrep::{
    clamp_feasible, decode_coeffs_with, sample_coeffs, sample_meta, CoeffSeq, MetaBox, MetaParams, DY, END, R, RADIUS,
    SPINE, START, Y,
};
use crate::diffusion::DiffusionModel;
use crate::geometry::SmoothnessThresholds;
use crate::registry::Registry;
use crate::rng::{hash_str, stream, Rng};
use crate::{Error, Result};

/// Continuous meta entries searched over, with their step scale in units
/// of the station spacing (spine) or absolute (radii).
const META_KNOBS: [(usize, usize); 6] = [(START, Y), (START, DY), (SPINE, DY), (END, DY), (START, R), (RADIUS, R)];
const SPINE_STEP: f64 = 0.02;
const RADIUS_STEP: f64 = 0.005;
const LOGIT_STEP: f64 = 0.5;
/// Coefficients are kept off the sigmoid saturation before taking logits.
const COEFF_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub target: AeroLabel,
    pub init: String,
    pub success: bool,
    /// Surrogate evaluations after the initial point.
    pub iterations: usize,
    pub wall_ms: f64,
    pub err_cl: f64,
    pub err_cd: f64,
    pub initial: AeroLabel,
    pub last: AeroLabel,
}

/// Maps a search vector to a feasible (meta, coeffs) pair around an
/// initial design: meta offsets followed by cosine-mode logit amplitudes
/// for each coefficient channel.
struct Design<'a> {
    meta: MetaParams,
    logits_u: Vec<f64>,
    logits_v: Vec<f64>,
    basis: usize,
    delta_x: f64,
    th: &'a SmoothnessThresholds,
}

fn logit(c: f64) -> f64 {
    let c = c.clamp(COEFF_EPS, 1.0 - COEFF_EPS);
    (c / (1.0 - c)).ln()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl<'a> Design<'a> {
    fn dim(&self) -> usize {
        META_KNOBS.len() + 2 * self.basis
    }

    fn realize(&self, x: &[f64]) -> Result<(MetaParams, CoeffSeq)> {
        let mut m = self.meta.m;
        for (k, &(row, col)) in META_KNOBS.iter().enumerate() {
            let step = if col == R {
                RADIUS_STEP
            } else {
                SPINE_STEP * self.delta_x
            };
            m[row][col] += step * x[k];
        }
        let meta = MetaParams::new(m).repair(self.delta_x, self.th);
        let counts = meta.check(self.delta_x, self.th)?;
        let n = self.logits_u.len();
        if counts.n != n {
            return Err(Error::shape("design changed the sequence length"));
        }
        let amp = &x[META_KNOBS.len()..];
        let wave = |logits: &[f64], a: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let s = i as f64 / (n - 1).max(1) as f64;
                    let d: f64 = a
                        .iter()
                        .enumerate()
                        .map(|(k, ak)| LOGIT_STEP * ak * (std::f64::consts::PI * k as f64 * s).cos())
                        .sum();
                    sigmoid(logits[i] + d)
                })
                .collect()
        };
        let coeffs = CoeffSeq {
            u_tilde: wave(&self.logits_u, &amp[..self.basis]),
            v_tilde: wave(&self.logits_v, &amp[self.basis..]),
        };
        Ok((meta, clamp_feasible(&coeffs, counts, self.th)))
    }

    fn label(&self, x: &[f64]) -> Result<AeroLabel> {
        let (meta, coeffs) = self.realize(x)?;
        eval_surrogate(&decode_coeffs_with(&meta, &coeffs, self.delta_x, self.th)?, REYNOLDS)
    }
}

/// Nelder-Mead on `|cl - cl*| + |cd - cd*|` over the meta entries and a
/// cosine basis of coefficient logits. Every iterate goes through the
/// constrained decoder, so every evaluated geometry is valid. Stops as
/// soon as both errors are within tolerance or the evaluation budget is
/// spent.
pub fn optimize_to_target(
    target: AeroLabel,
    init: (&MetaParams, &CoeffSeq),
    cfg: &OptimizeConfig,
    delta_x: f64,
    th: &SmoothnessThresholds,
    init_name: &str,
) -> Result<OptimizationResult> {
    let start = Instant::now();
    let (meta, coeffs) = init;
    let counts = meta.check(delta_x, th)?;
    if coeffs.len() != counts.n {
        return Err(Error::shape(format!(
            "{} coefficients for {} stations",
            coeffs.len(),
            counts.n
        )));
    }
    let design = Design {
        meta: *meta,
        logits_u: coeffs.u_tilde.iter().map(|&c| logit(c)).collect(),
        logits_v: coeffs.v_tilde.iter().map(|&c| logit(c)).collect(),
        basis: cfg.basis,
        delta_x,
        th,
    };
    let d = design.dim();
    let initial = eval_surrogate(&decode_coeffs_with(meta, coeffs, delta_x, th)?, REYNOLDS)?;
    let errs = |l: AeroLabel| ((l.cl - target.cl).abs(), (l.cd - target.cd).abs());
    let mut best = (initial, errs(initial));
    let mut evals = 0usize;
    let done = |e: (f64, f64)| e.0 <= cfg.tol && e.1 <= cfg.tol;
    let finish = |best: (AeroLabel, (f64, f64)), evals: usize| OptimizationResult {
        target,
        init: init_name.to_string(),
        success: done(best.1),
        iterations: evals,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        err_cl: best.1 .0,
        err_cd: best.1 .1,
        initial,
        last: best.0,
    };
    if done(best.1) {
        return Ok(finish(best, 0));
    }

    // Objective with evaluation counting and early exit on success.
    struct Stop;
    let mut eval = |x: &[f64]| -> std::result::Result<f64, Stop> {
        if evals >= cfg.budget {
            return Err(Stop);
        }
        evals += 1;
        let f = match design.label(x) {
            Ok(l) => {
                let e = errs(l);
                if e.0 + e.1 < best.1 .0 + best.1 .1 || done(e) {
                    best = (l, e);
                }
                if done(e) {
                    return Err(Stop);
                }
                e.0 + e.1
            }
            Err(_) => f64::INFINITY,
        };
        Ok(f)
    };
    let _ = nelder_mead(&mut eval, d);
    Ok(finish(best, evals))
}

/// Standard Nelder-Mead (reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5) from the origin with unit axis steps. Runs until the
/// objective signals a stop.
fn nelder_mead<E>(f: &mut impl FnMut(&[f64]) -> std::result::Result<f64, E>, d: usize) -> std::result::Result<(), E> {
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let x0 = vec![0.0; d];
    simplex.push((x0.clone(), f(&x0)?));
    for i in 0..d {
        let mut x = x0.clone();
        x[i] = 1.0;
        let v = f(&x)?;
        simplex.push((x, v));
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|p| p.0[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].clone();
        let along = |t: f64| -> Vec<f64> { (0..d).map(|j| centroid[j] + t * (worst.0[j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr)?;
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe)?;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = along(-0.5);
            let v = f(&x)?;
            (x, v)
        } else {
            let x = along(0.5);
            let v = f(&x)?;
            (x, v)
        };
        if fc < worst.1.min(fr) {
            simplex[d] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for p in simplex.iter_mut().skip(1) {
            let x: Vec<f64> = (0..d).map(|j| best[j] + 0.5 * (p.0[j] - best[j])).collect();
            let v = f(&x)?;
            *p = (x, v);
        }
    }
}

/// Everything an initialization strategy may draw on.
pub struct InitContext<'a> {
    pub ae: Option<&'a AutoEncoder>,
    pub diffusion: Option<&'a DiffusionModel>,
    pub grid: &'a ClassGrid,
    pub omega: f64,
    pub delta_x: f64,
    pub th: SmoothnessThresholds,
}

/// Source of the starting design for one optimization run.
pub trait InitStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn initial(&self, target: AeroLabel, rng: &mut Rng) -> Result<(MetaParams, CoeffSeq)>;
}

/// Diffusion sample for the target's class, decoded by the autoencoder.
pub struct GeneratedInit<'a> {
    ae: &'a AutoEncoder,
    diffusion: &'a DiffusionModel,
    grid: &'a ClassGrid,
    omega: f64,
}

impl InitStrategy for GeneratedInit<'_> {
    fn name(&self) -> &'static str {
        "generated"
    }

    fn initial(&self, target: AeroLabel, rng: &mut Rng) -> Result<(MetaParams, CoeffSeq)> {
        let class = classify(target, self.grid);
        let z = self.diffusion.sample(class, self.omega, 1, rng)?.remove(0);
        let (meta, coeffs, _) = self.ae.decode(&z)?;
        Ok((meta, coeffs))
    }
}

/// Uniform draw over the feasible meta set and the coefficient box.
pub struct RandomInit {
    delta_x: f64,
    th: SmoothnessThresholds,
    bounds: MetaBox,
}

impl InitStrategy for RandomInit {
    fn name(&self) -> &'static str {
        "random"
    }

    fn initial(&self, _target: AeroLabel, rng: &mut Rng) -> Result<(MetaParams, CoeffSeq)> {
        let meta = sample_meta(rng, self.delta_x, &self.th, &self.bounds);
        let counts = meta.check(self.delta_x, &self.th)?;
        Ok((meta, sample_coeffs(rng, counts.n)))
    }
}

pub type InitFactory = for<'a> fn(&InitContext<'a>) -> Result<Box<dyn InitStrategy + 'a>>;

fn generated_factory<'a>(ctx: &InitContext<'a>) -> Result<Box<dyn InitStrategy + 'a>> {
    match (ctx.ae, ctx.diffusion) {
        (Some(ae), Some(diffusion)) => Ok(Box::new(GeneratedInit {
            ae,
            diffusion,
            grid: ctx.grid,
            omega: ctx.omega,
        })),
        _ => Err(Error::Config(
            "generated initialization needs autoencoder and diffusion checkpoints".into(),
        )),
    }
}

fn random_factory<'a>(ctx: &InitContext<'a>) -> Result<Box<dyn InitStrategy + 'a>> {
    let n_max = (1.0 / ctx.delta_x).round() as usize + 1;
    Ok(Box::new(RandomInit {
        delta_x: ctx.delta_x,
        th: ctx.th,
        bounds: MetaBox {
            n_min: n_max,
            n_max,
            ..MetaBox::default()
        },
    }))
}

/// Built-in initialization strategies: `"generated"` and `"random"`.
pub fn init_registry() -> Registry<InitFactory> {
    Registry::<InitFactory>::new("init strategy")
        .with("generated", generated_factory)
        .with("random", random_factory)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitSummary {
    pub init: String,
    pub runs: usize,
    pub success_rate: f64,
    /// Median over all runs; failed runs count their full budget.
    pub median_iterations: f64,
    pub mean_wall_ms: f64,
}

impl InitSummary {
    pub fn of(init: &str, results: &[OptimizationResult]) -> Self {
        let mine: Vec<&OptimizationResult> = results.iter().filter(|r| r.init == init).collect();
        let n = mine.len().max(1) as f64;
        let mut its: Vec<f64> = mine.iter().map(|r| r.iterations as f64).collect();
        its.sort_by(f64::total_cmp);
        let median = match its.len() {
            0 => f64::NAN,
            k if k % 2 == 1 => its[k / 2],
            k => 0.5 * (its[k / 2 - 1] + its[k / 2]),
        };
        Self {
            init: init.to_string(),
            runs: mine.len(),
            success_rate: mine.iter().filter(|r| r.success).count() as f64 / n,
            median_iterations: median,
            mean_wall_ms: mine.iter().map(|r| r.wall_ms).sum::<f64>() / n,
        }
    }
}

/// Runs every strategy on every target. The draw for (target i, strategy)
/// comes from its own stream, so results do not depend on ordering.
pub fn compare_inits(
    targets: &[AeroLabel],
    strategies: &[&dyn InitStrategy],
    cfg: &OptimizeConfig,
    delta_x: f64,
    th: &SmoothnessThresholds,
    seed: u64,
) -> Result<Vec<OptimizationResult>> {
    let jobs: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|i| (0..strategies.len()).map(move |s| (i, s)))
        .collect();
    jobs.par_iter()
        .map(|&(i, s)| {
            let strat = strategies[s];
            let mut rng = stream(hash_str(seed, strat.name()), i as u64);
            let (meta, coeffs) = strat.initial(targets[i], &mut rng)?;
            optimize_to_target(targets[i], (&meta, &coeffs), cfg, delta_x, th, strat.name())
        })
        .collect()
}
