use std::any::Any;
use std::fmt::Debug;

use crate::nn::{
    positional_encoding, visit_child, visit_child_mut, Activation, AttentionBlock, Dense, Matrix, Mlp, Parameterized,
};
use crate::registry::Registry;
use crate::rng::Rng;
use crate::{Error, Result};

/// Token-wise network between the embedded point tokens and the pool.
pub trait EncoderBackbone: Parameterized + Debug + Send + Sync {
    fn kind(&self) -> &'static str;
    /// `x` stacks sequences of `seq_len` rows each.
    fn forward(&self, x: &Matrix, seq_len: usize) -> Result<Matrix>;
    fn backward(&self, x: &Matrix, seq_len: usize, dy: &Matrix, grad: &mut dyn EncoderBackbone) -> Result<Matrix>;
    fn boxed_clone(&self) -> Box<dyn EncoderBackbone>;
    fn as_any_mut(&mut self) -> &mut dyn Any;
}

impl Clone for Box<dyn EncoderBackbone> {
    fn clone(&self) -> Self {
        self.boxed_clone()
    }
}

impl Parameterized for Box<dyn EncoderBackbone> {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        (**self).visit(f)
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        (**self).visit_mut(f)
    }
}

fn downcast<T: 'static>(grad: &mut dyn EncoderBackbone) -> Result<&mut T> {
    grad.as_any_mut()
        .downcast_mut::<T>()
        .ok_or_else(|| Error::shape("gradient accumulator has a different backbone"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackboneShape {
    pub d_model: usize,
    pub hidden: usize,
    pub d_z: usize,
    pub layers: usize,
}

/// Per-token MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBackbone {
    pub mlp: Mlp,
}

impl EncoderBackbone for DenseBackbone {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn forward(&self, x: &Matrix, _seq_len: usize) -> Result<Matrix> {
        self.mlp.forward(x)
    }

    fn backward(&self, x: &Matrix, _seq_len: usize, dy: &Matrix, grad: &mut dyn EncoderBackbone) -> Result<Matrix> {
        let g = downcast::<Self>(grad)?;
        self.mlp.backward(x, dy, &mut g.mlp)
    }

    fn boxed_clone(&self) -> Box<dyn EncoderBackbone> {
        Box::new(self.clone())
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

impl Parameterized for DenseBackbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("mlp", &self.mlp, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("mlp", &mut self.mlp, f);
    }
}

/// Self-attention blocks over each sequence, then a linear map to `d_z`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBackbone {
    pub blocks: Vec<AttentionBlock>,
    pub out: Dense,
}

impl AttentionBackbone {
    fn trace(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let mut hs = vec![x.clone()];
        for b in &self.blocks {
            let next = b.forward(hs.last().expect("non-empty"))?;
            hs.push(next);
        }
        Ok(hs)
    }
}

fn sequences(x: &Matrix, seq_len: usize) -> Result<usize> {
    if seq_len == 0 || !x.rows().is_multiple_of(seq_len) {
        return Err(Error::shape(format!(
            "{} rows are not whole sequences of {seq_len}",
            x.rows()
        )));
    }
    Ok(x.rows() / seq_len)
}

impl EncoderBackbone for AttentionBackbone {
    fn kind(&self) -> &'static str {
        "attention"
    }

    fn forward(&self, x: &Matrix, seq_len: usize) -> Result<Matrix> {
        let parts = (0..sequences(x, seq_len)?)
            .map(|s| {
                let hs = self.trace(&x.slice_rows(s * seq_len, (s + 1) * seq_len))?;
                self.out.forward(hs.last().expect("non-empty"))
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::vcat(&parts.iter().collect::<Vec<_>>())
    }

    fn backward(&self, x: &Matrix, seq_len: usize, dy: &Matrix, grad: &mut dyn EncoderBackbone) -> Result<Matrix> {
        let g = downcast::<Self>(grad)?;
        let mut parts = Vec::new();
        for s in 0..sequences(x, seq_len)? {
            let (a, b) = (s * seq_len, (s + 1) * seq_len);
            let hs = self.trace(&x.slice_rows(a, b))?;
            let mut d = self
                .out
                .backward(hs.last().expect("non-empty"), &dy.slice_rows(a, b), &mut g.out)?;
            for i in (0..self.blocks.len()).rev() {
                d = self.blocks[i].backward(&hs[i], &d, &mut g.blocks[i])?;
            }
            parts.push(d);
        }
        Matrix::vcat(&parts.iter().collect::<Vec<_>>())
    }

    fn boxed_clone(&self) -> Box<dyn EncoderBackbone> {
        Box::new(self.clone())
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

impl Parameterized for AttentionBackbone {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("blocks", &self.blocks, f);
        visit_child("out", &self.out, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("blocks", &mut self.blocks, f);
        visit_child_mut("out", &mut self.out, f);
    }
}

pub type EncoderFactory = fn(&mut Rng, BackboneShape) -> Box<dyn EncoderBackbone>;

/// Built-in encoder backbones: `"dense"` and `"attention"`.
pub fn encoder_registry() -> Registry<EncoderFactory> {
    Registry::<EncoderFactory>::new("encoder backbone")
        .with("dense", |rng: &mut Rng, s: BackboneShape| -> Box<dyn EncoderBackbone> {
            Box::new(DenseBackbone {
                mlp: Mlp::new(rng, &[s.d_model, s.hidden, s.d_z], Activation::Silu),
            })
        })
        .with(
            "attention",
            |rng: &mut Rng, s: BackboneShape| -> Box<dyn EncoderBackbone> {
                Box::new(AttentionBackbone {
                    blocks: (0..s.layers.max(1))
                        .map(|_| AttentionBlock::new(rng, s.d_model, s.hidden))
                        .collect(),
                    out: Dense::new(rng, s.d_model, s.d_z, 1.0),
                })
            },
        )
}

/// Point tokens to a pooled embedding: `f_i = proj(t_i) + PE_i`,
/// `g = backbone(f)`, `z = mean_i g_i`.
#[derive(Debug, Clone)]
pub struct ShapeEncoder {
    pub proj: Dense,
    pub backbone: Box<dyn EncoderBackbone>,
    pe: Matrix,
}

impl ShapeEncoder {
    pub fn new(rng: &mut Rng, kind: &str, d_code: usize, seq_len: usize, shape: BackboneShape) -> Result<Self> {
        let factory = encoder_registry().get(kind).copied()?;
        Ok(Self {
            proj: Dense::new(rng, d_code, shape.d_model, 1.0),
            backbone: factory(rng, shape),
            pe: positional_encoding(seq_len, shape.d_model)?,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.pe.rows()
    }

    fn embed(&self, tokens: &Matrix) -> Result<Matrix> {
        let l = self.seq_len();
        if !tokens.rows().is_multiple_of(l) || tokens.rows() == 0 {
            return Err(Error::domain(format!(
                "encoder expects profiles of {l} points, got {} rows",
                tokens.rows()
            )));
        }
        let mut f = self.proj.forward(tokens)?;
        for s in 0..tokens.rows() / l {
            for i in 0..l {
                for (v, p) in f.row_mut(s * l + i).iter_mut().zip(self.pe.row(i)) {
                    *v += p;
                }
            }
        }
        Ok(f)
    }

    /// Embeddings (one row per sequence) of stacked token sequences.
    pub fn forward(&self, tokens: &Matrix) -> Result<Matrix> {
        let f = self.embed(tokens)?;
        let g = self.backbone.forward(&f, self.seq_len())?;
        Ok(mean_pool(&g, self.seq_len()))
    }

    pub fn backward(&self, tokens: &Matrix, dz: &Matrix, grad: &mut ShapeEncoder) -> Result<()> {
        let l = self.seq_len();
        let f = self.embed(tokens)?;
        let mut dg = Matrix::zeros(tokens.rows(), dz.cols());
        for s in 0..dz.rows() {
            for i in 0..l {
                for (o, v) in dg.row_mut(s * l + i).iter_mut().zip(dz.row(s)) {
                    *o = v / l as f64;
                }
            }
        }
        let df = self.backbone.backward(&f, l, &dg, grad.backbone.as_mut())?;
        self.proj.backward(tokens, &df, &mut grad.proj)?;
        Ok(())
    }
}

/// Mean of each block of `seq_len` rows.
pub fn mean_pool(g: &Matrix, seq_len: usize) -> Matrix {
    let s = g.rows() / seq_len;
    Matrix::from_fn(s, g.cols(), |b, j| {
        (0..seq_len).map(|i| g[(b * seq_len + i, j)]).sum::<f64>() / seq_len as f64
    })
}

impl Parameterized for ShapeEncoder {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("proj", &self.proj, f);
        visit_child("backbone", &self.backbone, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("proj", &mut self.proj, f);
        visit_child_mut("backbone", &mut self.backbone, f);
    }
}
