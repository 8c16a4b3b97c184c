use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{mse_loss, visit_child, visit_child_mut, Adam, AdamConfig, Dense, Matrix, Parameterized, ResBlock};
use crate::geometry::Profile;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RvqConfig {
    /// Points per neighbourhood (odd).
    pub k_neighbors: usize,
    pub depth: usize,
    pub codes: usize,
    pub d_code: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub w_recon: f64,
    pub w_codebook: f64,
    /// Weight of the encoder commitment term inside the codebook loss.
    pub commitment: f64,
    pub lr: f64,
    pub batch: usize,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            depth: 2,
            codes: 256,
            d_code: 16,
            hidden: 64,
            blocks: 2,
            w_recon: 1.0,
            w_codebook: 0.01,
            commitment: 0.25,
            lr: 1e-3,
            batch: 256,
        }
    }
}

/// Hierarchical code tables: `layers[l]` is `K x d_code`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub layers: Vec<Matrix>,
    /// Assignments per code since the last reseed.
    pub usage: Vec<Vec<u64>>,
}

impl Codebook {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::domain("codebook has no layers"))?;
        let (k, d) = first.shape();
        if k == 0 || layers.iter().any(|l| l.shape() != (k, d)) {
            return Err(Error::domain("codebook layers must be non-empty and equally shaped"));
        }
        let usage = vec![vec![0; k]; layers.len()];
        Ok(Self { layers, usage })
    }

    pub fn random(rng: &mut Rng, depth: usize, codes: usize, d_code: usize, std: f64) -> Result<Self> {
        Self::new((0..depth).map(|_| super::randn(rng, codes, d_code, std)).collect())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn d_code(&self) -> usize {
        self.layers[0].cols()
    }

    pub fn reset_usage(&mut self) {
        for u in &mut self.usage {
            u.fill(0);
        }
    }
}

impl Parameterized for Codebook {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layer{i}"), l);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layer{i}"), l);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub codes: Vec<usize>,
    pub quantized: Vec<f64>,
    /// `sum_l |r_l - c_l|^2` with `r_1 = o`.
    pub codebook_loss: f64,
    /// `|o - quantized|^2`.
    pub commit_residual: f64,
    /// Residual before each layer (`depth` entries).
    pub residuals: Vec<Vec<f64>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(table: &Matrix, v: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for k in 0..table.rows() {
        let d = dist2(table.row(k), v);
        if d < bd {
            bd = d;
            best = k;
        }
    }
    best
}

/// Residual quantization: each layer picks the code nearest to what the
/// previous layers left over.
pub fn rvq_quantize(o: &[f64], cb: &Codebook) -> Result<Quantized> {
    if cb.layers.is_empty() || cb.layers[0].rows() == 0 {
        return Err(Error::domain("empty codebook"));
    }
    if o.len() != cb.d_code() {
        return Err(Error::shape(format!(
            "vector of {} for codes of {}",
            o.len(),
            cb.d_code()
        )));
    }
    let mut r = o.to_vec();
    let mut q = vec![0.0; o.len()];
    let mut codes = Vec::with_capacity(cb.depth());
    let mut residuals = Vec::with_capacity(cb.depth());
    let mut loss = 0.0;
    for table in &cb.layers {
        let k = nearest(table, &r);
        let c = table.row(k);
        residuals.push(r.clone());
        for j in 0..r.len() {
            q[j] += c[j];
            r[j] -= c[j];
        }
        loss += r.iter().map(|v| v * v).sum::<f64>();
        codes.push(k);
    }
    Ok(Quantized {
        codes,
        commit_residual: dist2(o, &q),
        quantized: q,
        codebook_loss: loss,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RvqLosses {
    pub recon: f64,
    pub codebook: f64,
    pub total: f64,
}

/// Neighbourhood tokenizer: linear projection to `d_code`, residual
/// quantization, and a residual decoder reconstructing the neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqModel {
    pub config: RvqConfig,
    pub proj: Dense,
    pub codebook: Codebook,
    pub dec_in: Dense,
    pub dec_blocks: Vec<ResBlock>,
    pub dec_out: Dense,
}

impl RvqModel {
    pub fn new(rng: &mut Rng, config: RvqConfig) -> Result<Self> {
        if config.k_neighbors.is_multiple_of(2) {
            return Err(Error::domain("neighbourhood size must be odd"));
        }
        let d_o = 2 * config.k_neighbors;
        let h = config.hidden;
        Ok(Self {
            proj: Dense::new(rng, d_o, config.d_code, 1.0),
            codebook: Codebook::random(rng, config.depth, config.codes, config.d_code, 0.1)?,
            dec_in: Dense::new(rng, config.d_code, h, 1.0),
            dec_blocks: (0..config.blocks).map(|_| ResBlock::new(rng, h, h)).collect(),
            dec_out: Dense::new(rng, h, d_o, 1.0),
            config,
        })
    }

    pub fn project(&self, o: &Matrix) -> Result<Matrix> {
        self.proj.forward(o)
    }

    /// Quantized token per row of `o`.
    pub fn quantize(&self, o: &Matrix) -> Result<(Matrix, Vec<Quantized>)> {
        let e = self.project(o)?;
        let qs: Vec<Quantized> = (0..e.rows())
            .map(|i| rvq_quantize(e.row(i), &self.codebook))
            .collect::<Result<_>>()?;
        let q = Matrix::from_vec(
            e.rows(),
            e.cols(),
            qs.iter().flat_map(|q| q.quantized.iter().copied()).collect(),
        )?;
        Ok((q, qs))
    }

    /// Quantized neighbourhood tokens of a profile (`len x d_code`).
    pub fn tokens(&self, profile: &Profile) -> Result<Matrix> {
        let o = super::gather_neighbors(profile, self.config.k_neighbors)?;
        Ok(self.quantize(&o)?.0)
    }

    pub fn decode(&self, q: &Matrix) -> Result<Matrix> {
        let mut h = self.dec_in.forward(q)?;
        for b in &self.dec_blocks {
            h = b.forward(&h)?;
        }
        self.dec_out.forward(&h)
    }

    fn decode_backward(&self, q: &Matrix, dy: &Matrix, grad: &mut RvqModel) -> Result<Matrix> {
        let mut hs = vec![self.dec_in.forward(q)?];
        for b in &self.dec_blocks {
            let next = b.forward(hs.last().expect("non-empty"))?;
            hs.push(next);
        }
        let mut g = self
            .dec_out
            .backward(hs.last().expect("non-empty"), dy, &mut grad.dec_out)?;
        for i in (0..self.dec_blocks.len()).rev() {
            g = self.dec_blocks[i].backward(&hs[i], &g, &mut grad.dec_blocks[i])?;
        }
        self.dec_in.backward(q, &g, &mut grad.dec_in)
    }

    /// Losses and gradients of one batch; usage counters are updated.
    pub fn loss_and_grad(&mut self, o: &Matrix) -> Result<(RvqLosses, RvqModel)> {
        if o.rows() == 0 {
            return Err(Error::domain("empty batch"));
        }
        let cfg = self.config.clone();
        let n = o.rows() as f64;
        let mut grad = self.zeros_like();
        let e = self.project(o)?;
        let (q, qs) = self.quantize(o)?;
        let recon = self.decode(&q)?;
        let (l_rec, mut d_rec) = mse_loss(&recon, o)?;
        d_rec.scale(cfg.w_recon);
        let dq = self.decode_backward(&q, &d_rec, &mut grad)?;

        let mut l_cb = 0.0;
        let mut l_commit = 0.0;
        let mut de = dq;
        let w_commit = cfg.w_codebook * cfg.commitment;
        for (i, qi) in qs.iter().enumerate() {
            l_cb += qi.codebook_loss;
            l_commit += qi.commit_residual;
            for (l, (&code, r)) in qi.codes.iter().zip(&qi.residuals).enumerate() {
                self.codebook.usage[l][code] += 1;
                let c = self.codebook.layers[l].row(code).to_vec();
                let g = grad.codebook.layers[l].row_mut(code);
                for j in 0..c.len() {
                    g[j] += cfg.w_codebook * 2.0 * (c[j] - r[j]) / n;
                }
            }
            let er = e.row(i);
            for (j, v) in de.row_mut(i).iter_mut().enumerate() {
                *v += w_commit * 2.0 * (er[j] - qi.quantized[j]) / n;
            }
        }
        self.proj.backward(o, &de, &mut grad.proj)?;
        let codebook = (l_cb + cfg.commitment * l_commit) / n;
        let losses = RvqLosses {
            recon: l_rec,
            codebook,
            total: cfg.w_recon * l_rec + cfg.w_codebook * codebook,
        };
        Ok((losses, grad))
    }

    /// Seeds codes from projected data: layer 1 from random rows, deeper
    /// layers from the residuals left by the layers above.
    pub fn init_codebook(&mut self, o: &Matrix, rng: &mut Rng) -> Result<()> {
        let e = self.project(o)?;
        let mut resid = e;
        for l in 0..self.codebook.depth() {
            let k = self.codebook.layers[l].rows();
            for c in 0..k {
                let i = rng.gen_range(0..resid.rows());
                let src = resid.row(i).to_vec();
                self.codebook.layers[l].row_mut(c).copy_from_slice(&src);
            }
            for i in 0..resid.rows() {
                let c = nearest(&self.codebook.layers[l], resid.row(i));
                let code = self.codebook.layers[l].row(c).to_vec();
                for (v, cv) in resid.row_mut(i).iter_mut().zip(&code) {
                    *v -= cv;
                }
            }
        }
        Ok(())
    }

    /// Replaces unused codes with random residuals of `o` at their layer.
    pub fn reseed_dead(&mut self, o: &Matrix, rng: &mut Rng) -> Result<usize> {
        let (_, qs) = self.quantize(o)?;
        let mut reseeded = 0;
        for l in 0..self.codebook.depth() {
            for c in 0..self.codebook.layers[l].rows() {
                if self.codebook.usage[l][c] == 0 {
                    let pick = &qs[rng.gen_range(0..qs.len())];
                    self.codebook.layers[l].row_mut(c).copy_from_slice(&pick.residuals[l]);
                    reseeded += 1;
                }
            }
        }
        self.codebook.reset_usage();
        Ok(reseeded)
    }

    /// One pass over shuffled rows of `data`; returns the mean losses.
    pub fn train_epoch(&mut self, data: &Matrix, adam: &mut Adam, rng: &mut Rng) -> Result<RvqLosses> {
        if data.rows() == 0 {
            return Err(Error::domain("empty training set"));
        }
        let mut idx: Vec<usize> = (0..data.rows()).collect();
        idx.shuffle(rng);
        let mut sum = RvqLosses::default();
        let mut batches = 0.0;
        for chunk in idx.chunks(self.config.batch.max(1)) {
            let batch = data.select_rows(chunk);
            let (l, g) = self.loss_and_grad(&batch)?;
            adam.step(self, &g)?;
            sum.recon += l.recon;
            sum.codebook += l.codebook;
            sum.total += l.total;
            batches += 1.0;
        }
        let sample: Vec<usize> = idx.iter().copied().take(4 * self.config.batch.max(1)).collect();
        self.reseed_dead(&data.select_rows(&sample), rng)?;
        Ok(RvqLosses {
            recon: sum.recon / batches,
            codebook: sum.codebook / batches,
            total: sum.total / batches,
        })
    }

    pub fn optimizer(&self) -> Adam {
        Adam::for_model(
            AdamConfig {
                lr: self.config.lr,
                ..AdamConfig::default()
            },
            self,
        )
    }
}

impl Parameterized for RvqModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("proj", &self.proj, f);
        visit_child("codebook", &self.codebook, f);
        visit_child("dec_in", &self.dec_in, f);
        visit_child("dec_blocks", &self.dec_blocks, f);
        visit_child("dec_out", &self.dec_out, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("proj", &mut self.proj, f);
        visit_child_mut("codebook", &mut self.codebook, f);
        visit_child_mut("dec_in", &mut self.dec_in, f);
        visit_child_mut("dec_blocks", &mut self.dec_blocks, f);
        visit_child_mut("dec_out", &mut self.dec_out, f);
    }
}
