use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Which operand of a product is transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    N,
    T,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.axpy(1.0, other)
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Adds `bias` (length `cols`) to every row.
    pub fn add_row(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(format!(
                "row of {} added to {} columns",
                bias.len(),
                self.cols
            )));
        }
        for r in self.data.chunks_exact_mut(self.cols) {
            for (a, b) in r.iter_mut().zip(bias) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Column sums as a `1 x cols` matrix.
    pub fn sum_rows(&self) -> Self {
        let mut out = vec![0.0; self.cols];
        for r in self.data.chunks_exact(self.cols.max(1)) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        Self::row_vector(&out)
    }

    pub fn mean_rows(&self) -> Self {
        let mut s = self.sum_rows();
        s.scale(1.0 / self.rows.max(1) as f64);
        s
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Rows `[start, end)`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Rows picked by index.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns `[start, end)`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |i, j| self[(i, start + j)])
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&Matrix]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::shape("hcat of matrices with different row counts"));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    /// Vertical concatenation.
    pub fn vcat(parts: &[&Matrix]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(Error::shape("vcat of matrices with different column counts"));
        }
        let mut data = Vec::new();
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        Ok(Self { rows, cols, data })
    }

    /// `op(self) * op(other)`.
    pub fn matmul_t(&self, ta: Trans, other: &Self, tb: Trans) -> Result<Self> {
        let mut out = Self::zeros(0, 0);
        self.gemm_into(ta, other, tb, 0.0, &mut out)?;
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_t(Trans::N, other, Trans::N)
    }

    /// `out = op(self) * op(other) + beta * out`; `out` is resized when
    /// `beta == 0`.
    pub fn gemm_into(&self, ta: Trans, other: &Self, tb: Trans, beta: f64, out: &mut Self) -> Result<()> {
        let (m, k) = match ta {
            Trans::N => (self.rows, self.cols),
            Trans::T => (self.cols, self.rows),
        };
        let (k2, n) = match tb {
            Trans::N => (other.rows, other.cols),
            Trans::T => (other.cols, other.rows),
        };
        if k != k2 {
            return Err(Error::shape(format!("product of {m}x{k} and {k2}x{n}")));
        }
        if beta == 0.0 {
            *out = Self::zeros(m, n);
        } else if out.shape() != (m, n) {
            return Err(Error::shape(format!(
                "accumulator is {:?}, product is {m}x{n}",
                out.shape()
            )));
        }
        if m == 0 || n == 0 {
            return Ok(());
        }
        if k == 0 {
            out.scale(beta);
            return Ok(());
        }
        let (rsa, csa) = strides(self.cols, ta);
        let (rsb, csb) = strides(other.cols, tb);
        // SAFETY: strides and extents describe the owned buffers exactly; the
        // output does not alias either input.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                rsa,
                csa,
                other.data.as_ptr(),
                rsb,
                csb,
                beta,
                out.data.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(())
    }

    pub fn frobenius2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        Ok(())
    }
}

fn strides(cols: usize, t: Trans) -> (isize, isize) {
    match t {
        Trans::N => (cols as isize, 1),
        Trans::T => (1, cols as isize),
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a[(i, k)] * b[(k, j)]).sum()
        })
    }

    #[test]
    fn products_match_naive() {
        let a = Matrix::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.5 - 2.0);
        let b = Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64).sin());
        let c = a.matmul(&b).unwrap();
        for (x, y) in c.data().iter().zip(naive(&a, &b).data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let at = a.transpose();
        let bt = b.transpose();
        let c2 = at.matmul_t(Trans::T, &bt, Trans::T).unwrap();
        for (x, y) in c.data().iter().zip(c2.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn accumulate_adds() {
        let a = Matrix::identity(3);
        let mut out = Matrix::from_fn(3, 3, |i, j| (i + j) as f64);
        let before = out.clone();
        a.gemm_into(Trans::N, &a, Trans::N, 1.0, &mut out).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let e = before[(i, j)] + if i == j { 1.0 } else { 0.0 };
                assert_eq!(out[(i, j)], e);
            }
        }
    }

    #[test]
    fn concat_and_slices() {
        let a = Matrix::from_fn(2, 2, |i, j| (i * 2 + j) as f64);
        let b = Matrix::from_fn(2, 1, |i, _| 10.0 + i as f64);
        let h = Matrix::hcat(&[&a, &b]).unwrap();
        assert_eq!(h.row(1), &[2.0, 3.0, 11.0]);
        assert_eq!(h.slice_cols(2, 3), b);
        let v = Matrix::vcat(&[&a, &a]).unwrap();
        assert_eq!(v.slice_rows(2, 4), a);
        assert_eq!(v.select_rows(&[3, 0]).row(0), &[2.0, 3.0]);
        assert_eq!(a.sum_rows().data(), &[2.0, 4.0]);
    }
}
