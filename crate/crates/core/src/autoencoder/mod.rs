//! Shape autoencoder: quantized point tokens are pooled into an embedding
//! `z`; a meta head and an autoregressive coefficient head decode `z`
//! through the constrained cs-rep decoder, so every output is a valid
//! airfoil.

mod coeffs;
mod encoder;
mod loss;
mod meta;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use coeffs::CoefDecoder;
pub use encoder::{
    encoder_registry, mean_pool, AttentionBackbone, BackboneShape, DenseBackbone, EncoderBackbone, EncoderFactory,
    ShapeEncoder,
};
pub use loss::{loss_total, LossTerms, LossWeights};
pub use meta::{snap_and_repair, MetaDecoder, MetaQuantizer, META_LEN};

use crate::csrep::{derive_counts, CoeffSeq, MetaParams};
use crate::geometry::{CsRep, SmoothnessThresholds};
use crate::nn::{visit_child, visit_child_mut, Activation, Adam, AdamConfig, Matrix, Parameterized};
use crate::rng::Rng;
use crate::{Error, Result};

/// Pooled latent of one airfoil.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeEmbedding(pub Vec<f64>);

impl ShapeEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeConfig {
    pub encoder: String,
    pub d_model: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub d_z: usize,
    pub bins: usize,
    pub meta_hidden: usize,
    pub coef_hidden: usize,
    pub context: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub weights: LossWeights,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self {
            encoder: "dense".into(),
            d_model: 32,
            enc_hidden: 64,
            enc_layers: 2,
            d_z: 32,
            bins: 256,
            meta_hidden: 64,
            coef_hidden: 64,
            context: 8,
            lr: 3e-5,
            batch: 128,
            epochs: 100,
            weights: LossWeights::default(),
        }
    }
}

/// Training pair: the quantized tokens of a profile and its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AeSample {
    pub tokens: Matrix,
    pub meta: MetaParams,
    pub rep: CsRep,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AeLosses {
    pub ce: f64,
    pub mse: f64,
    pub recon: f64,
    pub auxi: f64,
    pub total: f64,
}

impl AeLosses {
    fn add_scaled(&mut self, o: &AeLosses, s: f64) {
        self.ce += s * o.ce;
        self.mse += s * o.mse;
        self.recon += s * o.recon;
        self.auxi += s * o.auxi;
        self.total += s * o.total;
    }
}

/// JSON sidecar stored next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeSidecar {
    pub d_z: usize,
    #[serde(rename = "B")]
    pub bins: usize,
    pub delta_x: f64,
    pub profile_len: usize,
    pub d_code: usize,
    pub quantizer: MetaQuantizer,
    pub config: AeConfig,
}

#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub config: AeConfig,
    pub encoder: ShapeEncoder,
    pub meta: MetaDecoder,
    pub coef: CoefDecoder,
    pub quantizer: MetaQuantizer,
    pub delta_x: f64,
    pub th: SmoothnessThresholds,
}

impl AutoEncoder {
    pub fn new(
        rng: &mut Rng,
        config: AeConfig,
        quantizer: MetaQuantizer,
        d_code: usize,
        profile_len: usize,
        delta_x: f64,
    ) -> Result<Self> {
        if quantizer.bins != config.bins {
            return Err(Error::Config(format!(
                "quantizer has {} bins, config {}",
                quantizer.bins, config.bins
            )));
        }
        let shape = BackboneShape {
            d_model: config.d_model,
            hidden: config.enc_hidden,
            d_z: config.d_z,
            layers: config.enc_layers,
        };
        Ok(Self {
            encoder: ShapeEncoder::new(rng, &config.encoder, d_code, profile_len, shape)?,
            meta: MetaDecoder::new(rng, config.d_z, config.meta_hidden, config.bins),
            coef: CoefDecoder::new(rng, config.d_z, config.coef_hidden, config.context),
            quantizer,
            delta_x,
            th: SmoothnessThresholds::for_spacing(delta_x),
            config,
        })
    }

    pub fn sidecar(&self) -> AeSidecar {
        AeSidecar {
            d_z: self.config.d_z,
            bins: self.config.bins,
            delta_x: self.delta_x,
            profile_len: self.encoder.seq_len(),
            d_code: self.encoder.proj.d_in(),
            quantizer: self.quantizer.clone(),
            config: self.config.clone(),
        }
    }

    /// Skeleton matching a sidecar, ready for a checkpoint load.
    pub fn from_sidecar(s: &AeSidecar) -> Result<Self> {
        let mut rng = crate::rng::stream(0, 0);
        Self::new(
            &mut rng,
            s.config.clone(),
            s.quantizer.clone(),
            s.d_code,
            s.profile_len,
            s.delta_x,
        )
    }

    pub fn save(&self, ckpt: &Path, sidecar: &Path) -> Result<()> {
        crate::nn::save_checkpoint(ckpt, self)?;
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(sidecar, json).map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(ckpt: &Path, sidecar: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let s: AeSidecar = serde_json::from_str(&text)?;
        let mut ae = Self::from_sidecar(&s)?;
        crate::nn::load_checkpoint(ckpt, &mut ae)?;
        Ok(ae)
    }

    /// Embedding of one profile's tokens.
    pub fn encode(&self, tokens: &Matrix) -> Result<ShapeEmbedding> {
        if tokens.rows() != self.encoder.seq_len() {
            return Err(Error::domain(format!(
                "profile has {} points, model expects {}",
                tokens.rows(),
                self.encoder.seq_len()
            )));
        }
        Ok(ShapeEmbedding(self.encoder.forward(tokens)?.into_vec()))
    }

    /// Embeddings of many profiles (one row each).
    pub fn encode_batch(&self, tokens: &[&Matrix]) -> Result<Matrix> {
        self.encoder.forward(&Matrix::vcat(tokens)?)
    }

    pub fn decode_meta(&self, z: &ShapeEmbedding) -> Result<MetaParams> {
        self.meta.decode(&z.0, &self.quantizer, self.delta_x, &self.th)
    }

    pub fn decode_coeffs_ar(&self, z: &ShapeEmbedding, meta: &MetaParams) -> Result<CoeffSeq> {
        let norm = self.quantizer.normalized(meta);
        Ok(self.coef.run(&z.0, meta, &norm, self.delta_x, &self.th)?.0)
    }

    /// Full decode; always a valid airfoil.
    pub fn decode(&self, z: &ShapeEmbedding) -> Result<(MetaParams, CoeffSeq, CsRep)> {
        let meta = self.decode_meta(z)?;
        let norm = self.quantizer.normalized(&meta);
        let (coeffs, dec) = self.coef.run(&z.0, &meta, &norm, self.delta_x, &self.th)?;
        Ok((meta, coeffs, dec.finish()?))
    }

    /// Batch-mean losses and parameter gradients with teacher forcing.
    pub fn loss_and_grad(&self, batch: &[&AeSample]) -> Result<(AeLosses, AutoEncoder)> {
        self.batch_pass(batch, true)
            .map(|(l, g)| (l, g.expect("gradient requested")))
    }

    pub fn loss(&self, batch: &[&AeSample]) -> Result<AeLosses> {
        Ok(self.batch_pass(batch, false)?.0)
    }

    fn batch_pass(&self, batch: &[&AeSample], want_grad: bool) -> Result<(AeLosses, Option<AutoEncoder>)> {
        if batch.is_empty() {
            return Err(Error::domain("empty batch"));
        }
        let nb = batch.len();
        let scale = 1.0 / nb as f64;
        let tokens = Matrix::vcat(&batch.iter().map(|s| &s.tokens).collect::<Vec<_>>())?;
        let z = self.encoder.forward(&tokens)?;
        let meta_logits = self.meta.logits(&z)?;

        let mut feats = Vec::with_capacity(nb);
        let mut counts = Vec::with_capacity(nb);
        for (b, s) in batch.iter().enumerate() {
            let c = derive_counts(&s.meta, self.delta_x)?;
            if c.n != s.rep.len() {
                return Err(Error::shape(format!(
                    "meta implies {} tokens, target has {}",
                    c.n,
                    s.rep.len()
                )));
            }
            let norm = self.quantizer.normalized(&s.meta);
            feats.push(
                self.coef
                    .teacher_features(z.row(b), &norm, c, &s.rep.spine_y, &s.rep.radii),
            );
            counts.push(c);
        }
        let f = Matrix::vcat(&feats.iter().collect::<Vec<_>>())?;
        let coef_logits = self.coef.mlp.forward(&f)?;

        let mut losses = AeLosses::default();
        let mut d_meta = Matrix::zeros(meta_logits.rows(), meta_logits.cols());
        let mut d_coef = Matrix::zeros(coef_logits.rows(), 2);
        let mut off = 0;
        for (b, s) in batch.iter().enumerate() {
            let n = counts[b].n;
            let lg = coef_logits.slice_rows(off, off + n);
            let coeffs = CoefDecoder::squash(&lg);
            let dec = crate::csrep::decode_traced(&s.meta, &coeffs, self.delta_x, &self.th)?;
            let (py, pr) = dec.tokens();
            let rows = meta_logits.slice_rows(b * META_LEN, (b + 1) * META_LEN);
            let bins = self.quantizer.bins_of(&s.meta);
            let t = loss_total(
                &rows,
                &bins,
                (py, pr),
                (&s.rep.spine_y, &s.rep.radii),
                self.delta_x,
                &self.config.weights,
            )?;
            losses.add_scaled(
                &AeLosses {
                    ce: t.ce,
                    mse: t.mse,
                    recon: t.recon,
                    auxi: t.auxi,
                    total: t.recon + t.auxi,
                },
                scale,
            );
            if want_grad {
                for k in 0..META_LEN {
                    for (o, v) in d_meta.row_mut(b * META_LEN + k).iter_mut().zip(t.d_logits.row(k)) {
                        *o = v * scale;
                    }
                }
                let g = dec.backward(&t.g_y, &t.g_r);
                let sig = Activation::Sigmoid;
                for i in 0..n {
                    d_coef[(off + i, 0)] = scale * g.u_tilde[i] * sig.derivative(lg[(i, 0)]);
                    d_coef[(off + i, 1)] = scale * g.v_tilde[i] * sig.derivative(lg[(i, 1)]);
                }
            }
            off += n;
        }
        if !want_grad {
            return Ok((losses, None));
        }
        let mut grad = self.clone();
        grad.zero();
        let df = self.coef.mlp.backward(&f, &d_coef, &mut grad.coef.mlp)?;
        let mut dz = self.meta.backward(&z, &d_meta, &mut grad.meta)?;
        let d_z = self.config.d_z;
        let mut off = 0;
        for (b, c) in counts.iter().enumerate() {
            for i in 0..c.n {
                for j in 0..d_z {
                    dz[(b, j)] += df[(off + i, j)];
                }
            }
            off += c.n;
        }
        self.encoder.backward(&tokens, &dz, &mut grad.encoder)?;
        Ok((losses, Some(grad)))
    }

    /// Mean losses over `samples` in chunks of the batch size.
    pub fn mean_loss(&self, samples: &[AeSample]) -> Result<AeLosses> {
        let mut acc = AeLosses::default();
        let bs = self.config.batch.max(1);
        for chunk in samples.chunks(bs) {
            let refs: Vec<&AeSample> = chunk.iter().collect();
            acc.add_scaled(&self.loss(&refs)?, chunk.len() as f64 / samples.len() as f64);
        }
        Ok(acc)
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

    /// Mini-batch Adam over shuffled samples; returns mean loss per epoch.
    pub fn train_epoch(&mut self, samples: &[AeSample], adam: &mut Adam, rng: &mut Rng) -> Result<AeLosses> {
        if samples.is_empty() {
            return Err(Error::domain("empty training set"));
        }
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(rng);
        let mut acc = AeLosses::default();
        for chunk in idx.chunks(self.config.batch.max(1)) {
            let refs: Vec<&AeSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (l, g) = self.loss_and_grad(&refs)?;
            adam.step(self, &g)?;
            acc.add_scaled(&l, chunk.len() as f64 / samples.len() as f64);
        }
        if !self.is_finite() {
            return Err(Error::domain("training diverged: non-finite parameters"));
        }
        Ok(acc)
    }
}

impl Parameterized for AutoEncoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("encoder", &self.encoder, f);
        visit_child("meta", &self.meta, f);
        visit_child("coef", &self.coef, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("encoder", &mut self.encoder, f);
        visit_child_mut("meta", &mut self.meta, f);
        visit_child_mut("coef", &mut self.coef, f);
    }
}
