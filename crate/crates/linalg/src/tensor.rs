//! Dense tensor and matrix storage.
//!
//! `DenseTensor` holds 1-D, 2-D or 4-D weights in row-major order (last
//! index fastest). `Matrix` is the 2-D working form every decomposition
//! and reassembly runs on. Convolution kernels `(c_out, c_in, h, w)`
//! reshape to `c_out x (c_in*h*w)`; because both sides are row-major the
//! reshape is a pure reinterpretation of the same buffer.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if !matches!(dims.len(), 1 | 2 | 4) {
            return Err(Error::Shape(format!(
                "tensor rank must be 1, 2 or 4, got {}",
                dims.len()
            )));
        }
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "dims {:?} imply {} elements, data has {}",
                dims,
                numel,
                data.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero extent in dims {dims:?}")));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric("non-finite tensor entry".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let numel: usize = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; numel],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("matrix must be at least 1x1, got {rows}x{cols}")));
        }
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Reshape a 2-D or 4-D weight tensor into its matrix working form.
///
/// A `(c_out, c_in, h, w)` kernel becomes `c_out x (c_in*h*w)` with the
/// `(c_in, h, w)` axes flattened last-fastest; 2-D tensors pass through.
/// 1-D weights are never decomposed and are rejected.
pub fn reshape_kernel(t: &DenseTensor) -> Result<Matrix> {
    match t.dims() {
        [r, c] => Matrix::new(*r, *c, t.data().to_vec()),
        [co, ci, h, w] => Matrix::new(*co, ci * h * w, t.data().to_vec()),
        dims => Err(Error::Shape(format!(
            "only 2-D and 4-D weights reshape to matrices, got rank {}",
            dims.len()
        ))),
    }
}

/// Exact inverse of [`reshape_kernel`] for 4-D kernels.
pub fn unreshape_kernel(m: &Matrix, dims: [usize; 4]) -> Result<DenseTensor> {
    let [co, ci, h, w] = dims;
    if m.rows() != co || m.cols() != ci * h * w {
        return Err(Error::Shape(format!(
            "matrix {}x{} does not match dims {:?}",
            m.rows(),
            m.cols(),
            dims
        )));
    }
    DenseTensor::new(vec![co, ci, h, w], m.data().to_vec())
}
