use serde::{Deserialize, Serialize};

use super::{randn, visit_child, visit_child_mut, Matrix, Parameterized, Trans};
use crate::rng::Rng;
use crate::{Error, Result};

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

impl Dense {
    /// He-style initialization scaled by `gain`.
    pub fn new(rng: &mut Rng, d_in: usize, d_out: usize, gain: f64) -> Self {
        Self {
            w: randn(rng, d_in, d_out, gain / (d_in as f64).sqrt()),
            b: Matrix::zeros(1, d_out),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            w: Matrix::zeros(d_in, d_out),
            b: Matrix::zeros(1, d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.rows()
    }

    pub fn d_out(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = x.matmul(&self.w)?;
        y.add_row(self.b.data())?;
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Dense) -> Result<Matrix> {
        x.gemm_into(Trans::T, dy, Trans::N, 1.0, &mut grad.w)?;
        grad.b.add_assign(&dy.sum_rows())?;
        dy.matmul_t(Trans::N, &self.w, Trans::T)
    }
}

impl Parameterized for Dense {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

const LN_EPS: f64 = 1e-5;

/// Per-row normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Matrix::from_vec(1, d, vec![1.0; d]).expect("shape"),
            beta: Matrix::zeros(1, d),
        }
    }

    /// Normalized rows before the affine map, with per-row inverse std.
    fn normalize(x: &Matrix) -> (Matrix, Vec<f64>) {
        let d = x.cols() as f64;
        let mut xhat = x.clone();
        let mut inv = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let r = xhat.row_mut(i);
            let mu = r.iter().sum::<f64>() / d;
            let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
            let s = 1.0 / (var + LN_EPS).sqrt();
            for v in r.iter_mut() {
                *v = (*v - mu) * s;
            }
            inv.push(s);
        }
        (xhat, inv)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let (mut y, _) = Self::normalize(x);
        let (g, b) = (self.gamma.data(), self.beta.data());
        for i in 0..y.rows() {
            for (j, v) in y.row_mut(i).iter_mut().enumerate() {
                *v = *v * g[j] + b[j];
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut LayerNorm) -> Result<Matrix> {
        self.check(x)?;
        let (xhat, inv) = Self::normalize(x);
        let d = x.cols();
        let g = self.gamma.data();
        let mut dx = Matrix::zeros(x.rows(), d);
        for i in 0..x.rows() {
            let (xr, dyr) = (xhat.row(i), dy.row(i));
            let mut dxhat = vec![0.0; d];
            for j in 0..d {
                grad.gamma.data_mut()[j] += dyr[j] * xr[j];
                grad.beta.data_mut()[j] += dyr[j];
                dxhat[j] = dyr[j] * g[j];
            }
            let m1 = dxhat.iter().sum::<f64>() / d as f64;
            let m2 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = inv[i] * (dxhat[j] - m1 - xr[j] * m2);
            }
        }
        Ok(dx)
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.gamma.cols() {
            return Err(Error::shape(format!(
                "layer norm over {} features got {}",
                self.gamma.cols(),
                x.cols()
            )));
        }
        Ok(())
    }
}

impl Parameterized for LayerNorm {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("gamma", &self.gamma);
        f("beta", &self.beta);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }
}

/// Elementwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Silu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Self::Identity => v,
            Self::Silu => v * sigmoid(v),
            Self::LeakyRelu(a) => {
                if v >= 0.0 {
                    v
                } else {
                    a * v
                }
            }
            Self::Tanh => v.tanh(),
            Self::Sigmoid => sigmoid(v),
        }
    }

    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Silu => {
                let s = sigmoid(v);
                s * (1.0 + v * (1.0 - s))
            }
            Self::LeakyRelu(a) => {
                if v >= 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Self::Tanh => 1.0 - v.tanh().powi(2),
            Self::Sigmoid => {
                let s = sigmoid(v);
                s * (1.0 - s)
            }
        }
    }

    pub fn forward(self, x: &Matrix) -> Matrix {
        x.map(|v| self.apply(v))
    }

    pub fn backward(self, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        x.zip_map(dy, |v, g| g * self.derivative(v))
    }
}

/// Stack of dense layers with an activation between them (none after the
/// last layer).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub act: Activation,
}

impl Mlp {
    /// `dims = [d_in, h1, ..., d_out]`.
    pub fn new(rng: &mut Rng, dims: &[usize], act: Activation) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 2 == dims.len() { 1.0 } else { 2f64.sqrt() };
                Dense::new(rng, w[0], w[1], gain)
            })
            .collect();
        Self { layers, act }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, Dense::d_out)
    }

    /// Inputs of every layer plus the final output.
    fn trace(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        let mut acts = vec![x.clone()];
        for (i, l) in self.layers.iter().enumerate() {
            let pre = l.forward(acts.last().expect("non-empty"))?;
            if i + 1 < self.layers.len() {
                acts.push(pre.clone());
                acts.push(self.act.forward(&pre));
            } else {
                acts.push(pre);
            }
        }
        Ok(acts)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(&h)?;
            if i + 1 < self.layers.len() {
                h = self.act.forward(&h);
            }
        }
        Ok(h)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Mlp) -> Result<Matrix> {
        let acts = self.trace(x)?;
        let mut g = dy.clone();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            // acts layout: [x, pre0, post0, pre1, post1, ..., out]
            if i < last {
                g = self.act.backward(&acts[2 * i + 1], &g)?;
            }
            let input = &acts[if i == 0 { 0 } else { 2 * i }];
            g = self.layers[i].backward(input, &g, &mut grad.layers[i])?;
        }
        Ok(g)
    }
}

impl Parameterized for Mlp {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.layers.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.layers.visit_mut(f);
    }
}

/// Pre-norm residual block `y = x + MLP(LN(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub ln: LayerNorm,
    pub mlp: Mlp,
}

impl ResBlock {
    pub fn new(rng: &mut Rng, d: usize, hidden: usize) -> Self {
        Self {
            ln: LayerNorm::new(d),
            mlp: Mlp::new(rng, &[d, hidden, d], Activation::Silu),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = self.mlp.forward(&self.ln.forward(x)?)?;
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut ResBlock) -> Result<Matrix> {
        let u = self.ln.forward(x)?;
        let du = self.mlp.backward(&u, dy, &mut grad.mlp)?;
        let mut dx = self.ln.backward(x, &du, &mut grad.ln)?;
        dx.add_assign(dy)?;
        Ok(dx)
    }
}

impl Parameterized for ResBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("ln", &self.ln, f);
        visit_child("mlp", &self.mlp, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("ln", &mut self.ln, f);
        visit_child_mut("mlp", &mut self.mlp, f);
    }
}

/// Pre-norm transformer block over one sequence (rows are tokens):
/// `h = x + Attn(LN(x))`, `y = h + FF(LN(h))`, single head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub ln1: LayerNorm,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2: LayerNorm,
    pub ff: Mlp,
}

struct AttnTrace {
    u: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    a: Matrix,
    o: Matrix,
    h: Matrix,
    u2: Matrix,
}

impl AttentionBlock {
    pub fn new(rng: &mut Rng, d: usize, d_ff: usize) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        Self {
            ln1: LayerNorm::new(d),
            wq: randn(rng, d, d, s),
            wk: randn(rng, d, d, s),
            wv: randn(rng, d, d, s),
            wo: randn(rng, d, d, s),
            ln2: LayerNorm::new(d),
            ff: Mlp::new(rng, &[d, d_ff, d], Activation::Silu),
        }
    }

    fn trace(&self, x: &Matrix) -> Result<AttnTrace> {
        let u = self.ln1.forward(x)?;
        let q = u.matmul(&self.wq)?;
        let k = u.matmul(&self.wk)?;
        let v = u.matmul(&self.wv)?;
        let mut s = q.matmul_t(Trans::N, &k, Trans::T)?;
        s.scale(1.0 / (q.cols() as f64).sqrt());
        let a = super::softmax(&s);
        let o = a.matmul(&v)?;
        let mut h = o.matmul(&self.wo)?;
        h.add_assign(x)?;
        let u2 = self.ln2.forward(&h)?;
        Ok(AttnTrace {
            u,
            q,
            k,
            v,
            a,
            o,
            h,
            u2,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let t = self.trace(x)?;
        let mut y = self.ff.forward(&t.u2)?;
        y.add_assign(&t.h)?;
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut AttentionBlock) -> Result<Matrix> {
        let t = self.trace(x)?;
        let du2 = self.ff.backward(&t.u2, dy, &mut grad.ff)?;
        let mut dh = self.ln2.backward(&t.h, &du2, &mut grad.ln2)?;
        dh.add_assign(dy)?;
        t.o.gemm_into(Trans::T, &dh, Trans::N, 1.0, &mut grad.wo)?;
        let d_o = dh.matmul_t(Trans::N, &self.wo, Trans::T)?;
        let da = d_o.matmul_t(Trans::N, &t.v, Trans::T)?;
        let dv = t.a.matmul_t(Trans::T, &d_o, Trans::N)?;
        let scale = 1.0 / (t.q.cols() as f64).sqrt();
        let mut ds = Matrix::zeros(da.rows(), da.cols());
        for i in 0..da.rows() {
            let (ar, dar) = (t.a.row(i), da.row(i));
            let dot: f64 = ar.iter().zip(dar).map(|(a, b)| a * b).sum();
            for (j, o) in ds.row_mut(i).iter_mut().enumerate() {
                *o = ar[j] * (dar[j] - dot) * scale;
            }
        }
        let dq = ds.matmul(&t.k)?;
        let dk = ds.matmul_t(Trans::T, &t.q, Trans::N)?;
        t.u.gemm_into(Trans::T, &dq, Trans::N, 1.0, &mut grad.wq)?;
        t.u.gemm_into(Trans::T, &dk, Trans::N, 1.0, &mut grad.wk)?;
        t.u.gemm_into(Trans::T, &dv, Trans::N, 1.0, &mut grad.wv)?;
        let mut du = dq.matmul_t(Trans::N, &self.wq, Trans::T)?;
        dk.gemm_into(Trans::N, &self.wk, Trans::T, 1.0, &mut du)?;
        dv.gemm_into(Trans::N, &self.wv, Trans::T, 1.0, &mut du)?;
        let mut dx = self.ln1.backward(x, &du, &mut grad.ln1)?;
        dx.add_assign(&dh)?;
        Ok(dx)
    }
}

impl Parameterized for AttentionBlock {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        visit_child("ln1", &self.ln1, f);
        f("wq", &self.wq);
        f("wk", &self.wk);
        f("wv", &self.wv);
        f("wo", &self.wo);
        visit_child("ln2", &self.ln2, f);
        visit_child("ff", &self.ff, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        visit_child_mut("ln1", &mut self.ln1, f);
        f("wq", &mut self.wq);
        f("wk", &mut self.wk);
        f("wv", &mut self.wv);
        f("wo", &mut self.wo);
        visit_child_mut("ln2", &mut self.ln2, f);
        visit_child_mut("ff", &mut self.ff, f);
    }
}

/// Same-padded 1-D convolution over a sequence (rows are positions,
/// columns are channels). The kernel is stored as a `(k * c_in) x c_out`
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub w: Matrix,
    pub b: Matrix,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(rng: &mut Rng, c_in: usize, c_out: usize, kernel: usize, gain: f64) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::domain(format!("kernel width {kernel} must be odd")));
        }
        Ok(Self {
            w: randn(rng, kernel * c_in, c_out, gain / ((kernel * c_in) as f64).sqrt()),
            b: Matrix::zeros(1, c_out),
            kernel,
        })
    }

    pub fn c_in(&self) -> usize {
        self.w.rows() / self.kernel
    }

    pub fn c_out(&self) -> usize {
        self.w.cols()
    }

    fn im2col(&self, x: &Matrix) -> Result<Matrix> {
        let c = self.c_in();
        if x.cols() != c {
            return Err(Error::shape(format!("conv expects {c} channels, got {}", x.cols())));
        }
        let half = (self.kernel / 2) as isize;
        let len = x.rows() as isize;
        let mut col = Matrix::zeros(x.rows(), self.kernel * c);
        for t in 0..len {
            let row = col.row_mut(t as usize);
            for j in 0..self.kernel as isize {
                let s = t + j - half;
                if (0..len).contains(&s) {
                    row[j as usize * c..(j as usize + 1) * c].copy_from_slice(x.row(s as usize));
                }
            }
        }
        Ok(col)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut y = self.im2col(x)?.matmul(&self.w)?;
        y.add_row(self.b.data())?;
        Ok(y)
    }

    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Conv1d) -> Result<Matrix> {
        let col = self.im2col(x)?;
        col.gemm_into(Trans::T, dy, Trans::N, 1.0, &mut grad.w)?;
        grad.b.add_assign(&dy.sum_rows())?;
        let dcol = dy.matmul_t(Trans::N, &self.w, Trans::T)?;
        let c = self.c_in();
        let half = (self.kernel / 2) as isize;
        let len = x.rows() as isize;
        let mut dx = Matrix::zeros(x.rows(), c);
        for t in 0..len {
            for j in 0..self.kernel as isize {
                let s = t + j - half;
                if (0..len).contains(&s) {
                    let src = &dcol.row(t as usize)[j as usize * c..(j as usize + 1) * c];
                    for (o, v) in dx.row_mut(s as usize).iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
        }
        Ok(dx)
    }
}

impl Parameterized for Conv1d {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("w", &self.w);
        f("b", &self.b);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}
