use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array of `f64` values.
///
/// The product of `shape` always equals `data.len()`. Two-dimensional
/// tensors are used as `[batch, features]` matrices throughout the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// `[rows, cols]` tensor from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stacks equally sized rows into a `[rows.len(), width]` matrix.
    pub fn stack_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(Error::dim(format!(
                    "row of length {} in a stack of width {width}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), width], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix; a vector is a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Row width when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out[batch×n] (+)= x[batch×k] · wᵀ` with `w` stored as `[n×k]`.
pub(crate) fn matmul_xwt(x: &[f64], w: &[f64], batch: usize, k: usize, n: usize, out: &mut [f64], accumulate: bool) {
    debug_assert_eq!(x.len(), batch * k);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(out.len(), batch * n);
    if batch == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths are checked above; strides describe the row-major
    // layouts of x (batch×k), wᵀ (k×n, read from w stored n×k) and out (batch×n).
    unsafe {
        matrixmultiply::dgemm(
            batch,
            k,
            n,
            1.0,
            x.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[batch×k] = g[batch×n] · w[n×k]`.
pub(crate) fn matmul_gw(g: &[f64], w: &[f64], batch: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(g.len(), batch * n);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(out.len(), batch * k);
    if batch == 0 || k == 0 {
        return;
    }
    // SAFETY: lengths checked above; all operands are plain row-major.
    unsafe {
        matrixmultiply::dgemm(
            batch,
            n,
            k,
            1.0,
            g.as_ptr(),
            n as isize,
            1,
            w.as_ptr(),
            k as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `out[n×k] += gᵀ[n×batch] · x[batch×k]`.
pub(crate) fn matmul_gtx_acc(g: &[f64], x: &[f64], batch: usize, n: usize, k: usize, out: &mut [f64]) {
    debug_assert_eq!(g.len(), batch * n);
    debug_assert_eq!(x.len(), batch * k);
    debug_assert_eq!(out.len(), n * k);
    if batch == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: lengths checked above; gᵀ is read through swapped strides.
    unsafe {
        matrixmultiply::dgemm(
            n,
            batch,
            k,
            1.0,
            g.as_ptr(),
            1,
            n as isize,
            x.as_ptr(),
            k as isize,
            1,
            1.0,
            out.as_mut_ptr(),
            k as isize,
            1,
        );
    }
}
