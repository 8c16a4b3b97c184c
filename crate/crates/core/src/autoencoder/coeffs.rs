use crate::csrep::{CoeffSeq, Counts, Decoder, MetaParams};
use crate::geometry::SmoothnessThresholds;
use crate::nn::{visit_child, visit_child_mut, Activation, Matrix, Mlp, Parameterized};
use crate::rng::Rng;
use crate::Result;

use super::meta::META_LEN;

/// Token values are small; this brings them near unit scale.
const TOKEN_SCALE: f64 = 10.0;

/// Causal dense recurrence: step `i` sees the embedding, the normalized
/// meta vector, the previous `context` tokens and its position, and emits
/// the two coefficient logits.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefDecoder {
    pub mlp: Mlp,
    pub d_z: usize,
    pub context: usize,
}

impl CoefDecoder {
    pub fn new(rng: &mut Rng, d_z: usize, hidden: usize, context: usize) -> Self {
        let d_in = Self::feature_len(d_z, context);
        let mut mlp = Mlp::new(rng, &[d_in, hidden, hidden, 2], Activation::Silu);
        // Start near "hold", where ramps move slowly.
        mlp.layers.last_mut().expect("layers").b.fill(2.0);
        Self { mlp, d_z, context }
    }

    pub fn feature_len(d_z: usize, context: usize) -> usize {
        d_z + META_LEN + 2 * context + 3
    }

    fn features_into(
        &self,
        z: &[f64],
        meta_norm: &[f64],
        counts: Counts,
        ys: &[f64],
        rs: &[f64],
        i: usize,
        out: &mut [f64],
    ) {
        let Counts { n, pos_p, pos_r } = counts;
        let nf = n as f64;
        out[..self.d_z].copy_from_slice(z);
        let mut k = self.d_z;
        out[k..k + META_LEN].copy_from_slice(meta_norm);
        k += META_LEN;
        for w in 1..=self.context {
            let (y, r) = if i >= w {
                (ys[i - w] * TOKEN_SCALE, rs[i - w] * TOKEN_SCALE)
            } else {
                (0.0, 0.0)
            };
            out[k] = y;
            out[k + 1] = r;
            k += 2;
        }
        out[k] = i as f64 / nf;
        out[k + 1] = (i as f64 - (pos_p - 1) as f64) / nf;
        out[k + 2] = (i as f64 - (pos_r - 1) as f64) / nf;
    }

    /// Teacher-forced features for all steps, from the true tokens.
    pub fn teacher_features(&self, z: &[f64], meta_norm: &[f64], counts: Counts, ys: &[f64], rs: &[f64]) -> Matrix {
        let d = Self::feature_len(self.d_z, self.context);
        let mut f = Matrix::zeros(counts.n, d);
        for i in 0..counts.n {
            self.features_into(z, meta_norm, counts, ys, rs, i, f.row_mut(i));
        }
        f
    }

    /// Coefficients from logits through the sigmoid.
    pub fn squash(logits: &Matrix) -> CoeffSeq {
        let s = Activation::Sigmoid;
        CoeffSeq {
            u_tilde: (0..logits.rows()).map(|i| s.apply(logits[(i, 0)])).collect(),
            v_tilde: (0..logits.rows()).map(|i| s.apply(logits[(i, 1)])).collect(),
        }
    }

    /// Greedy autoregressive decode feeding back the decoded tokens.
    pub fn run(
        &self,
        z: &[f64],
        meta: &MetaParams,
        meta_norm: &[f64],
        delta_x: f64,
        th: &SmoothnessThresholds,
    ) -> Result<(CoeffSeq, Decoder)> {
        let mut dec = Decoder::new(meta, delta_x, th)?;
        let counts = dec.counts();
        let d = Self::feature_len(self.d_z, self.context);
        let mut coeffs = CoeffSeq {
            u_tilde: Vec::with_capacity(counts.n),
            v_tilde: Vec::with_capacity(counts.n),
        };
        let mut f = Matrix::zeros(1, d);
        for i in 0..counts.n {
            let (ys, rs) = dec.tokens();
            self.features_into(z, meta_norm, counts, ys, rs, i, f.row_mut(0));
            let c = Self::squash(&self.mlp.forward(&f)?);
            dec.push(c.u_tilde[0], c.v_tilde[0]);
            coeffs.u_tilde.push(c.u_tilde[0]);
            coeffs.v_tilde.push(c.v_tilde[0]);
        }
        Ok((coeffs, dec))
    }
}

impl Parameterized for CoefDecoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("mlp", &self.mlp, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("mlp", &mut self.mlp, f);
    }
}
