use serde::{Deserialize, Serialize};

use crate::csrep::{MetaParams, X};
use crate::geometry::SmoothnessThresholds;
use crate::nn::{visit_child, visit_child_mut, Activation, Dense, LayerNorm, Matrix, Parameterized};
use crate::rng::Rng;
use crate::{Error, Result};

pub const META_LEN: usize = 16;

/// Uniform binning of each of the 16 meta entries over a value range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaQuantizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: usize,
}

impl MetaQuantizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::domain(format!("need at least 2 bins, got {bins}")));
        }
        if lo.len() != META_LEN || hi.len() != META_LEN || lo.iter().zip(&hi).any(|(a, b)| !(a <= b)) {
            return Err(Error::domain("quantizer ranges must be 16 ordered pairs"));
        }
        Ok(Self { lo, hi, bins })
    }

    /// Ranges spanning every meta vector in `metas`.
    pub fn fit<'a>(metas: impl IntoIterator<Item = &'a MetaParams>, bins: usize) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; META_LEN];
        let mut hi = vec![f64::NEG_INFINITY; META_LEN];
        let mut any = false;
        for m in metas {
            any = true;
            for (k, v) in m.flat().iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        if !any {
            return Err(Error::domain("cannot fit a quantizer to an empty set"));
        }
        Self::new(lo, hi, bins)
    }

    pub fn width(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / self.bins as f64
    }

    pub fn bin(&self, k: usize, v: f64) -> usize {
        let w = self.width(k);
        if w <= 0.0 {
            return 0;
        }
        (((v - self.lo[k]) / w).floor().max(0.0) as usize).min(self.bins - 1)
    }

    pub fn center(&self, k: usize, b: usize) -> f64 {
        self.lo[k] + (b as f64 + 0.5) * self.width(k)
    }

    pub fn bins_of(&self, meta: &MetaParams) -> Vec<usize> {
        meta.flat().iter().enumerate().map(|(k, &v)| self.bin(k, v)).collect()
    }

    /// Entry value in `[0, 1]` relative to its range.
    pub fn normalized(&self, meta: &MetaParams) -> Vec<f64> {
        meta.flat()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let span = self.hi[k] - self.lo[k];
                if span > 0.0 {
                    (v - self.lo[k]) / span
                } else {
                    0.5
                }
            })
            .collect()
    }
}

/// Two linear + layer-norm blocks followed by 16 categorical heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaDecoder {
    pub l1: Dense,
    pub ln1: LayerNorm,
    pub l2: Dense,
    pub ln2: LayerNorm,
    pub head: Dense,
    pub bins: usize,
}

const ACT: Activation = Activation::Silu;

struct MetaTrace {
    a1: Matrix,
    n1: Matrix,
    h1: Matrix,
    a2: Matrix,
    n2: Matrix,
    h2: Matrix,
}

impl MetaDecoder {
    pub fn new(rng: &mut Rng, d_z: usize, hidden: usize, bins: usize) -> Self {
        Self {
            l1: Dense::new(rng, d_z, hidden, 1.0),
            ln1: LayerNorm::new(hidden),
            l2: Dense::new(rng, hidden, hidden, 1.0),
            ln2: LayerNorm::new(hidden),
            head: Dense::new(rng, hidden, META_LEN * bins, 1.0),
            bins,
        }
    }

    fn trace(&self, z: &Matrix) -> Result<MetaTrace> {
        let a1 = self.l1.forward(z)?;
        let n1 = self.ln1.forward(&a1)?;
        let h1 = ACT.forward(&n1);
        let a2 = self.l2.forward(&h1)?;
        let n2 = self.ln2.forward(&a2)?;
        let h2 = ACT.forward(&n2);
        Ok(MetaTrace { a1, n1, h1, a2, n2, h2 })
    }

    /// Logits with one row per (sample, entry): `(batch * 16) x bins`.
    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        let t = self.trace(z)?;
        let out = self.head.forward(&t.h2)?;
        Matrix::from_vec(z.rows() * META_LEN, self.bins, out.into_vec())
    }

    pub fn backward(&self, z: &Matrix, dlogits: &Matrix, grad: &mut MetaDecoder) -> Result<Matrix> {
        let t = self.trace(z)?;
        let dout = Matrix::from_vec(z.rows(), META_LEN * self.bins, dlogits.data().to_vec())?;
        let dh2 = self.head.backward(&t.h2, &dout, &mut grad.head)?;
        let dn2 = ACT.backward(&t.n2, &dh2)?;
        let da2 = self.ln2.backward(&t.a2, &dn2, &mut grad.ln2)?;
        let dh1 = self.l2.backward(&t.h1, &da2, &mut grad.l2)?;
        let dn1 = ACT.backward(&t.n1, &dh1)?;
        let da1 = self.ln1.backward(&t.a1, &dn1, &mut grad.ln1)?;
        self.l1.backward(z, &da1, &mut grad.l1)
    }

    /// Argmax bins mapped to centers, x entries snapped to the grid and the
    /// result projected onto the feasible set.
    pub fn decode(
        &self,
        z: &[f64],
        quantizer: &MetaQuantizer,
        delta_x: f64,
        th: &SmoothnessThresholds,
    ) -> Result<MetaParams> {
        let logits = self.logits(&Matrix::row_vector(z))?;
        let mut flat = [0.0; META_LEN];
        for (k, v) in flat.iter_mut().enumerate() {
            let row = logits.row(k);
            let b = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            *v = quantizer.center(k, b);
        }
        Ok(snap_and_repair(&MetaParams::from_flat(&flat)?, delta_x, th))
    }
}

/// Snaps the x entries to the `delta_x` grid of the first anchor, then
/// repairs ordering and reachability.
pub fn snap_and_repair(meta: &MetaParams, delta_x: f64, th: &SmoothnessThresholds) -> MetaParams {
    let mut m = meta.m;
    let x1 = m[0][X];
    for row in m.iter_mut().skip(1) {
        row[X] = x1 + ((row[X] - x1) / delta_x).round() * delta_x;
    }
    MetaParams::new(m).repair(delta_x, th)
}

impl Parameterized for MetaDecoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("l1", &self.l1, f);
        visit_child("ln1", &self.ln1, f);
        visit_child("l2", &self.l2, f);
        visit_child("ln2", &self.ln2, f);
        visit_child("head", &self.head, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("l1", &mut self.l1, f);
        visit_child_mut("ln1", &mut self.ln1, f);
        visit_child_mut("l2", &mut self.l2, f);
        visit_child_mut("ln2", &mut self.ln2, f);
        visit_child_mut("head", &mut self.head, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quantizer() -> MetaQuantizer {
        let lo: Vec<f64> = (0..16).map(|k| -(k as f64) * 0.1).collect();
        let hi: Vec<f64> = (0..16).map(|k| (k as f64) * 0.3 + 0.01).collect();
        MetaQuantizer::new(lo, hi, 256).unwrap()
    }

    #[test]
    fn centers_round_trip() {
        let q = quantizer();
        for k in 0..16 {
            for b in [0, 1, 77, 255] {
                assert_eq!(q.bin(k, q.center(k, b)), b);
            }
        }
    }

    #[test]
    fn error_is_at_most_half_a_bin() {
        let q = quantizer();
        for k in 0..16 {
            for i in 0..1000 {
                let v = q.lo[k] + (q.hi[k] - q.lo[k]) * i as f64 / 999.0;
                let e = (q.center(k, q.bin(k, v)) - v).abs();
                assert!(e <= 0.5 * q.width(k) * (1.0 + 1e-9), "{k} {v}");
            }
        }
    }

    #[test]
    fn bad_ranges_are_rejected() {
        assert!(MetaQuantizer::new(vec![0.0; 16], vec![1.0; 16], 1).is_err());
        assert!(MetaQuantizer::new(vec![1.0; 16], vec![0.0; 16], 4).is_err());
    }
}
