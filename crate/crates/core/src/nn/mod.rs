//! Minimal neural kernel: matrices, layers with hand-written backward
//! passes, Adam, positional encodings and a residual vector quantizer.
//!
//! Layers are pure: `forward(x)` returns the output and `backward(x, dy,
//! grad)` recomputes what it needs from the input, accumulates parameter
//! gradients into `grad` (a zeroed copy of the layer) and returns `dx`.

mod adam;
mod checkpoint;
mod encoding;
pub mod gradcheck;
mod layers;
mod loss;
mod matrix;
mod rvq;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ManifestEntry, MAGIC};
pub use encoding::{gather_neighbors, positional_encoding};
pub use layers::{Activation, AttentionBlock, Conv1d, Dense, LayerNorm, Mlp, ResBlock};
pub use loss::{mse_loss, softmax, softmax_xent};
pub use matrix::{Matrix, Trans};
pub use rvq::{rvq_quantize, Codebook, Quantized, RvqConfig, RvqLosses, RvqModel};

use crate::{Error, Result};

/// A set of named parameter matrices visited in a fixed order.
pub trait Parameterized {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.data().len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, m| out.extend_from_slice(m.data()));
        out
    }

    fn load_flat(&mut self, v: &[f64]) -> Result<()> {
        let need = self.num_params();
        if v.len() != need {
            return Err(Error::shape(format!("{} values for {need} parameters", v.len())));
        }
        let mut off = 0;
        self.visit_mut(&mut |_, m| {
            let d = m.data_mut();
            d.copy_from_slice(&v[off..off + d.len()]);
            off += d.len();
        });
        Ok(())
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |_, m| m.fill(0.0));
    }

    /// Zeroed copy used as a gradient accumulator.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        g.zero();
        g
    }

    fn manifest(&self) -> Vec<ManifestEntry> {
        let mut out = Vec::new();
        self.visit(&mut |name, m| {
            out.push(ManifestEntry {
                name: name.to_string(),
                rows: m.rows(),
                cols: m.cols(),
            })
        });
        out
    }

    fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, m| ok &= m.is_finite());
        ok
    }
}

/// Visits `child` with names prefixed by `prefix.`.
pub fn visit_child(prefix: &str, child: &dyn Parameterized, f: &mut dyn FnMut(&str, &Matrix)) {
    child.visit(&mut |n, m| f(&format!("{prefix}.{n}"), m));
}

pub fn visit_child_mut(prefix: &str, child: &mut dyn Parameterized, f: &mut dyn FnMut(&str, &mut Matrix)) {
    child.visit_mut(&mut |n, m| f(&format!("{prefix}.{n}"), m));
}

impl<T: Parameterized> Parameterized for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        for (i, c) in self.iter().enumerate() {
            visit_child(&i.to_string(), c, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        for (i, c) in self.iter_mut().enumerate() {
            visit_child_mut(&i.to_string(), c, f);
        }
    }
}

/// Gaussian-initialized matrix with standard deviation `std`.
pub fn randn(rng: &mut crate::rng::Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * crate::rng::normal(rng))
}
