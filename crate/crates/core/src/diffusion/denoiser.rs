use std::any::Any;
use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::aero::PerformanceClass;
use crate::nn::{
    positional_encoding, visit_child, visit_child_mut, Activation, Conv1d, Dense, LayerNorm, Matrix, Mlp,
    Parameterized, ResBlock,
};
use crate::registry::Registry;
use crate::rng::Rng;
use crate::{Error, Result};

/// Network from a noisy latent and its conditioning vector to a noise
/// estimate.
pub trait DenoiserBackbone: Parameterized + Debug + Send + Sync {
    fn kind(&self) -> &'static str;
    fn forward(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix>;
    /// Returns gradients for `z` and `cond`.
    fn backward(
        &self,
        z: &Matrix,
        cond: &Matrix,
        d_eps: &Matrix,
        grad: &mut dyn DenoiserBackbone,
    ) -> Result<(Matrix, Matrix)>;
    fn boxed_clone(&self) -> Box<dyn DenoiserBackbone>;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

impl Clone for Box<dyn DenoiserBackbone> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

impl Parameterized for Box<dyn DenoiserBackbone> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        (**self).visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        (**self).visit_mut(f)
    }
}

fn downcast<T: 'static>(grad: &mut dyn DenoiserBackbone) -> Result<&mut T> {
    grad.as_any_mut()
        .downcast_mut::<T>()
        .ok_or_else(|| Error::shape("gradient accumulator has a different backbone"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    pub backbone: String,
    pub d_z: usize,
    /// Real classes; the table has one extra null row.
    pub classes: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub time_dim: usize,
    /// Channel width of the convolutional backbone.
    pub channels: usize,
    pub steps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            backbone: "resmlp".into(),
            d_z: 32,
            classes: 9,
            hidden: 128,
            blocks: 3,
            time_dim: 32,
            channels: 16,
            steps: 1000,
        }
    }
}

/// Dense residual stack: `h = W z + cond`, residual blocks, linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ResMlpBackbone {
    pub inp: Dense,
    pub blocks: Vec<ResBlock>,
    pub ln: LayerNorm,
    pub out: Dense,
}

struct ResMlpTrace {
    hs: Vec<Matrix>,
    n: Matrix,
}

impl ResMlpBackbone {
    pub fn new(rng: &mut Rng, c: &DenoiserConfig) -> Self {
        Self {
            inp: Dense::new(rng, c.d_z, c.hidden, 1.0),
            blocks: (0..c.blocks)
                .map(|_| ResBlock::new(rng, c.hidden, 2 * c.hidden))
                .collect(),
            ln: LayerNorm::new(c.hidden),
            out: Dense::new(rng, c.hidden, c.d_z, 1.0),
        }
    }

    fn trace(&self, z: &Matrix, cond: &Matrix) -> Result<ResMlpTrace> {
        let mut h = self.inp.forward(z)?;
        h.add_assign(cond)?;
        let mut hs = vec![h];
        for b in &self.blocks {
            let next = b.forward(hs.last().expect("input"))?;
            hs.push(next);
        }
        let n = self.ln.forward(hs.last().expect("input"))?;
        Ok(ResMlpTrace { hs, n })
    }
}

impl DenoiserBackbone for ResMlpBackbone {
    fn kind(&self) -> &'static str {
        "resmlp"
    }

    fn forward(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix> {
        self.out.forward(&self.trace(z, cond)?.n)
    }

    fn backward(
        &self,
        z: &Matrix,
        cond: &Matrix,
        d_eps: &Matrix,
        grad: &mut dyn DenoiserBackbone,
    ) -> Result<(Matrix, Matrix)> {
        let g = downcast::<Self>(grad)?;
        let t = self.trace(z, cond)?;
        let dn = self.out.backward(&t.n, d_eps, &mut g.out)?;
        let mut dh = self.ln.backward(t.hs.last().expect("input"), &dn, &mut g.ln)?;
        for (k, b) in self.blocks.iter().enumerate().rev() {
            dh = b.backward(&t.hs[k], &dh, &mut g.blocks[k])?;
        }
        let dz = self.inp.backward(z, &dh, &mut g.inp)?;
        Ok((dz, dh))
    }

    fn boxed_clone(&self) -> Box<dyn DenoiserBackbone> {
        Box::new(self.clone())
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

impl Parameterized for ResMlpBackbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("inp", &self.inp, f);
        visit_child("blocks", &self.blocks, f);
        visit_child("ln", &self.ln, f);
        visit_child("out", &self.out, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("inp", &mut self.inp, f);
        visit_child_mut("blocks", &mut self.blocks, f);
        visit_child_mut("ln", &mut self.ln, f);
        visit_child_mut("out", &mut self.out, f);
    }
}

const UNET_ACT: Activation = Activation::Silu;

/// One-level 1-D UNet over the latent viewed as a one-channel sequence:
/// conv, pool by pairs, conv, repeat, concatenate with the skip, conv.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet1dBackbone {
    pub cond: Dense,
    pub conv_in: Conv1d,
    pub down: Conv1d,
    pub mid: Conv1d,
    pub up: Conv1d,
    pub conv_out: Conv1d,
}

struct UNetTrace {
    a0: Matrix,
    h0: Matrix,
    a1: Matrix,
    p: Matrix,
    a2: Matrix,
    h2: Matrix,
    cat: Matrix,
    a3: Matrix,
    h3: Matrix,
}

fn pool_pairs(x: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows() / 2, x.cols(), |i, j| 0.5 * (x[(2 * i, j)] + x[(2 * i + 1, j)]))
}

fn repeat_pairs(x: &Matrix) -> Matrix {
    Matrix::from_fn(2 * x.rows(), x.cols(), |i, j| x[(i / 2, j)])
}

impl UNet1dBackbone {
    pub fn new(rng: &mut Rng, c: &DenoiserConfig) -> Result<Self> {
        if !c.d_z.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "unet1d needs an even latent size, got {}",
                c.d_z
            )));
        }
        let ch = c.channels;
        Ok(Self {
            cond: Dense::new(rng, c.hidden, ch, 1.0),
            conv_in: Conv1d::new(rng, 1, ch, 3, 1.0)?,
            down: Conv1d::new(rng, ch, ch, 3, 2f64.sqrt())?,
            mid: Conv1d::new(rng, ch, 2 * ch, 3, 2f64.sqrt())?,
            up: Conv1d::new(rng, 3 * ch, ch, 3, 2f64.sqrt())?,
            conv_out: Conv1d::new(rng, ch, 1, 3, 1.0)?,
        })
    }

    fn trace(&self, z: &[f64], c: &[f64]) -> Result<UNetTrace> {
        let x = Matrix::from_vec(z.len(), 1, z.to_vec())?;
        let mut a0 = self.conv_in.forward(&x)?;
        a0.add_row(c)?;
        let h0 = UNET_ACT.forward(&a0);
        let a1 = self.down.forward(&h0)?;
        let h1 = UNET_ACT.forward(&a1);
        let p = pool_pairs(&h1);
        let a2 = self.mid.forward(&p)?;
        let h2 = UNET_ACT.forward(&a2);
        let cat = Matrix::hcat(&[&repeat_pairs(&h2), &h1])?;
        let a3 = self.up.forward(&cat)?;
        let h3 = UNET_ACT.forward(&a3);
        Ok(UNetTrace {
            a0,
            h0,
            a1,
            p,
            a2,
            h2,
            cat,
            a3,
            h3,
        })
    }
}

impl DenoiserBackbone for UNet1dBackbone {
    fn kind(&self) -> &'static str {
        "unet1d"
    }

    fn forward(&self, z: &Matrix, cond: &Matrix) -> Result<Matrix> {
        let c = self.cond.forward(cond)?;
        let mut out = Matrix::zeros(z.rows(), z.cols());
        for b in 0..z.rows() {
            let t = self.trace(z.row(b), c.row(b))?;
            let y = self.conv_out.forward(&t.h3)?;
            out.row_mut(b).copy_from_slice(y.data());
        }
        Ok(out)
    }

    fn backward(
        &self,
        z: &Matrix,
        cond: &Matrix,
        d_eps: &Matrix,
        grad: &mut dyn DenoiserBackbone,
    ) -> Result<(Matrix, Matrix)> {
        let g = downcast::<Self>(grad)?;
        let c = self.cond.forward(cond)?;
        let l = z.cols();
        let ch = self.conv_in.c_out();
        let mut dz = Matrix::zeros(z.rows(), l);
        let mut dc = Matrix::zeros(z.rows(), ch);
        for b in 0..z.rows() {
            let t = self.trace(z.row(b), c.row(b))?;
            let dy = Matrix::from_vec(l, 1, d_eps.row(b).to_vec())?;
            let dh3 = self.conv_out.backward(&t.h3, &dy, &mut g.conv_out)?;
            let da3 = UNET_ACT.backward(&t.a3, &dh3)?;
            let dcat = self.up.backward(&t.cat, &da3, &mut g.up)?;
            let h2c = t.h2.cols();
            let drep = dcat.slice_cols(0, h2c);
            let mut dh1 = dcat.slice_cols(h2c, dcat.cols());
            let dh2 = Matrix::from_fn(t.h2.rows(), h2c, |i, j| drep[(2 * i, j)] + drep[(2 * i + 1, j)]);
            let da2 = UNET_ACT.backward(&t.a2, &dh2)?;
            let dp = self.mid.backward(&t.p, &da2, &mut g.mid)?;
            for i in 0..dh1.rows() {
                for j in 0..ch {
                    dh1[(i, j)] += 0.5 * dp[(i / 2, j)];
                }
            }
            let da1 = UNET_ACT.backward(&t.a1, &dh1)?;
            let dh0 = self.down.backward(&t.h0, &da1, &mut g.down)?;
            let da0 = UNET_ACT.backward(&t.a0, &dh0)?;
            let x = Matrix::from_vec(l, 1, z.row(b).to_vec())?;
            let dx = self.conv_in.backward(&x, &da0, &mut g.conv_in)?;
            dz.row_mut(b).copy_from_slice(dx.data());
            dc.row_mut(b).copy_from_slice(da0.sum_rows().data());
        }
        let dcond = self.cond.backward(cond, &dc, &mut g.cond)?;
        Ok((dz, dcond))
    }

    fn boxed_clone(&self) -> Box<dyn DenoiserBackbone> {
        Box::new(self.clone())
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

impl Parameterized for UNet1dBackbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("cond", &self.cond, f);
        visit_child("conv_in", &self.conv_in, f);
        visit_child("down", &self.down, f);
        visit_child("mid", &self.mid, f);
        visit_child("up", &self.up, f);
        visit_child("conv_out", &self.conv_out, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("cond", &mut self.cond, f);
        visit_child_mut("conv_in", &mut self.conv_in, f);
        visit_child_mut("down", &mut self.down, f);
        visit_child_mut("mid", &mut self.mid, f);
        visit_child_mut("up", &mut self.up, f);
        visit_child_mut("conv_out", &mut self.conv_out, f);
    }
}

pub type DenoiserFactory = fn(&mut Rng, &DenoiserConfig) -> Result<Box<dyn DenoiserBackbone>>;

/// Built-in denoiser backbones: `"resmlp"` and `"unet1d"`.
pub fn denoiser_registry() -> Registry<DenoiserFactory> {
    Registry::<DenoiserFactory>::new("denoiser backbone")
        .with(
            "resmlp",
            |rng: &mut Rng, c: &DenoiserConfig| -> Result<Box<dyn DenoiserBackbone>> {
                Ok(Box::new(ResMlpBackbone::new(rng, c)))
            },
        )
        .with(
            "unet1d",
            |rng: &mut Rng, c: &DenoiserConfig| -> Result<Box<dyn DenoiserBackbone>> {
                Ok(Box::new(UNet1dBackbone::new(rng, c)?))
            },
        )
}

/// Noise predictor: time embedding plus additive class embedding feeding
/// a registered backbone.
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub time: Mlp,
    /// Row 0 is the null class and stays exactly zero.
    pub class_table: Matrix,
    pub backbone: Box<dyn DenoiserBackbone>,
    time_table: Matrix,
}

impl Denoiser {
    pub fn new(rng: &mut Rng, config: DenoiserConfig) -> Result<Self> {
        if config.d_z == 0 || config.hidden == 0 || config.steps < 2 {
            return Err(Error::Config(
                "denoiser needs positive sizes and at least 2 steps".into(),
            ));
        }
        let factory = denoiser_registry().get(&config.backbone).copied()?;
        let backbone = factory(rng, &config)?;
        let mut class_table = crate::nn::randn(rng, config.classes + 1, config.hidden, 1.0);
        class_table.row_mut(0).fill(0.0);
        Ok(Self {
            time: Mlp::new(rng, &[config.time_dim, config.hidden, config.hidden], Activation::Silu),
            class_table,
            backbone,
            time_table: positional_encoding(config.steps + 1, config.time_dim)?,
            config,
        })
    }

    fn check(&self, z: &Matrix, t: &[usize], cond: &[PerformanceClass]) -> Result<()> {
        if z.cols() != self.config.d_z || t.len() != z.rows() || cond.len() != z.rows() {
            return Err(Error::shape(format!(
                "denoiser input {}x{} with {} steps and {} conditions",
                z.rows(),
                z.cols(),
                t.len(),
                cond.len()
            )));
        }
        if let Some(&s) = t.iter().find(|&&s| s == 0 || s > self.config.steps) {
            return Err(Error::domain(format!("step {s} outside 1..={}", self.config.steps)));
        }
        if let Some(c) = cond.iter().find(|c| c.embedding_row() > self.config.classes) {
            return Err(Error::domain(format!("{c:?} outside {} classes", self.config.classes)));
        }
        Ok(())
    }

    fn cond(&self, t: &[usize], cond: &[PerformanceClass]) -> Result<(Matrix, Matrix)> {
        let pe = self.time_table.select_rows(t);
        let mut c = self.time.forward(&pe)?;
        for (i, k) in cond.iter().enumerate() {
            for (o, v) in c.row_mut(i).iter_mut().zip(self.class_table.row(k.embedding_row())) {
                *o += v;
            }
        }
        Ok((pe, c))
    }

    pub fn forward(&self, z: &Matrix, t: &[usize], cond: &[PerformanceClass]) -> Result<Matrix> {
        self.check(z, t, cond)?;
        let (_, c) = self.cond(t, cond)?;
        self.backbone.forward(z, &c)
    }

    /// Accumulates parameter gradients into `grad`; the null row receives
    /// none.
    pub fn backward(
        &self,
        z: &Matrix,
        t: &[usize],
        cond: &[PerformanceClass],
        d_eps: &Matrix,
        grad: &mut Denoiser,
    ) -> Result<Matrix> {
        self.check(z, t, cond)?;
        let (pe, c) = self.cond(t, cond)?;
        let (dz, dc) = self.backbone.backward(z, &c, d_eps, grad.backbone.as_mut())?;
        self.time.backward(&pe, &dc, &mut grad.time)?;
        for (i, k) in cond.iter().enumerate() {
            if *k != PerformanceClass::Null {
                for (o, v) in grad.class_table.row_mut(k.embedding_row()).iter_mut().zip(dc.row(i)) {
                    *o += v;
                }
            }
        }
        Ok(dz)
    }
}

impl Parameterized for Denoiser {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("time", &self.time, f);
        f("class_table", &self.class_table);
        visit_child("backbone", &self.backbone, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("time", &mut self.time, f);
        f("class_table", &mut self.class_table);
        visit_child_mut("backbone", &mut self.backbone, f);
    }
}
