//! Dense row-major f32 tensors with optional gradient buffers.
//!
//! Storage is 32-bit; every dot-product style reduction accumulates in
//! 64-bit floats and narrows once at the end, which keeps finite-difference
//! gradient checks tight without doubling memory. Reduction order is fixed,
//! so results are reproducible run to run.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math;

/// Norms below this are treated as zero: normalization returns its input
/// unchanged instead of dividing by a vanishing value.
pub const NORM_EPSILON: f32 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShapeError {
    /// Element count does not match the product of the dims.
    DataLength { expected: usize, got: usize },
    /// Inner dims of a matrix product disagree.
    InnerDim { lhs: usize, rhs: usize },
    /// An operation received a tensor of the wrong shape.
    DimMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    /// An operation required a different rank (e.g. a matrix, got a vector).
    RankMismatch { expected: usize, got: usize },
}

impl fmt::Display for ShapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            Self::InnerDim { lhs, rhs } => {
                write!(f, "matmul inner dims disagree: lhs={lhs}, rhs={rhs}")
            }
            Self::DimMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected shape {expected:?}, got {got:?}"),
            Self::RankMismatch { expected, got } => {
                write!(f, "expected rank {expected}, got rank {got}")
            }
        }
    }
}

impl core::error::Error for ShapeError {}

/// Row-major f32 tensor. The gradient buffer, when present, always has the
/// same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor, ShapeError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(ShapeError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            grad: None,
        }
    }

    pub fn vector(data: Vec<f32>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
            grad: None,
        }
    }

    pub fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Number of rows of a matrix (rank-2) tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a matrix (rank-2) tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let w = self.cols();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let w = self.cols();
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.shape[1] + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f32) {
        let w = self.shape[1];
        self.data[i * w + j] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    pub fn accumulate_grad(&mut self, values: &[f32], scale: f32) {
        debug_assert_eq!(values.len(), self.data.len());
        let g = self.grad_mut();
        for (gi, &v) in g.iter_mut().zip(values) {
            *gi += v * scale;
        }
    }

    pub fn scale(&self, s: f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
            grad: None,
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor, ShapeError> {
        self.zip_with(other, |a, b| a * b)
    }

    fn zip_with(
        &self,
        other: &Tensor,
        op: impl Fn(f32, f32) -> f32,
    ) -> Result<Tensor, ShapeError> {
        if self.shape != other.shape {
            return Err(ShapeError::DimMismatch {
                context: "elementwise op",
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| op(a, b))
                .collect(),
            grad: None,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
            grad: None,
        }
    }

    /// Reinterpret as a flat vector (no copy of values, shape only).
    pub fn flatten(&self) -> Tensor {
        Tensor {
            shape: vec![self.data.len()],
            data: self.data.clone(),
            grad: None,
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, ShapeError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(ShapeError::DataLength {
                expected,
                got: self.data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            grad: None,
        })
    }

}

fn ensure_matrix(t: &Tensor) -> Result<(), ShapeError> {
    if t.rank() != 2 {
        return Err(ShapeError::RankMismatch {
            expected: 2,
            got: t.rank(),
        });
    }
    Ok(())
}

/// `a (M×K) · b (K×N)`, accumulated in f64.
///
/// The inner loop runs over the shared dim in ascending order for every
/// output element, so the result is independent of how the loops are
/// blocked or vectorized.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    ensure_matrix(a)?;
    ensure_matrix(b)?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(ShapeError::InnerDim { lhs: k, rhs: k2 });
    }
    let mut out = vec![0.0f32; m * n];
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.fill(0.0);
        let arow = a.row(i);
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            let aik = aik as f64;
            for (accj, &bkj) in acc.iter_mut().zip(brow) {
                *accj += aik * bkj as f64;
            }
        }
        for (o, &v) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = v as f32;
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `a (M×K) · bᵀ` where `b` is `N×K`, accumulated in f64.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    ensure_matrix(a)?;
    ensure_matrix(b)?;
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(ShapeError::InnerDim { lhs: k, rhs: k2 });
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = 0.0f64;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x as f64 * y as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `aᵀ · b` where `a` is `K×M` and `b` is `K×N`, accumulated in f64.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, ShapeError> {
    ensure_matrix(a)?;
    ensure_matrix(b)?;
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(ShapeError::InnerDim { lhs: k, rhs: k2 });
    }
    let mut acc = vec![0.0f64; m * n];
    for kk in 0..k {
        let arow = a.row(kk);
        let brow = b.row(kk);
        for (i, &aki) in arow.iter().enumerate() {
            let aki = aki as f64;
            let dst = &mut acc[i * n..(i + 1) * n];
            for (d, &bkj) in dst.iter_mut().zip(brow) {
                *d += aki * bkj as f64;
            }
        }
    }
    Tensor::from_vec(&[m, n], acc.iter().map(|&v| v as f32).collect())
}

/// Row-wise softmax of a matrix, computed with max-subtraction so large
/// logits do not overflow. Each output row sums to 1 (±1e-6).
pub fn softmax_rows(x: &Tensor) -> Tensor {
    assert_eq!(x.rank(), 2, "softmax_rows expects a matrix");
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        softmax_slice(x.row(i), &mut out[i * n..(i + 1) * n]);
    }
    Tensor {
        shape: vec![m, n],
        data: out,
        grad: None,
    }
}

pub(crate) fn softmax_slice(src: &[f32], dst: &mut [f32]) {
    let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f64;
    for (d, &x) in dst.iter_mut().zip(src) {
        let e = math::exp64((x - max) as f64);
        sum += e;
        *d = e as f32;
    }
    let inv = 1.0 / sum;
    for d in dst.iter_mut() {
        *d = (*d as f64 * inv) as f32;
    }
}

/// Backward of row-wise softmax: given the softmax output `y` and upstream
/// gradient `dy`, returns the gradient w.r.t. the logits.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    debug_assert_eq!(y.shape(), dy.shape());
    let (m, n) = (y.rows(), y.cols());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let yr = y.row(i);
        let dr = dy.row(i);
        let dot: f64 = yr
            .iter()
            .zip(dr)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        for j in 0..n {
            out[i * n + j] = (yr[j] as f64 * (dr[j] as f64 - dot)) as f32;
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
        grad: None,
    }
}

pub(crate) fn l2_norm(xs: &[f32]) -> f64 {
    math::sqrt64(xs.iter().map(|&v| (v as f64) * (v as f64)).sum())
}

/// L2-normalize a vector. Inputs with norm below [`NORM_EPSILON`] are
/// returned unchanged.
pub fn l2_normalize(v: &Tensor) -> Tensor {
    let norm = l2_norm(v.data());
    if norm < NORM_EPSILON as f64 {
        return v.clone();
    }
    let inv = 1.0 / norm;
    Tensor {
        shape: v.shape.clone(),
        data: v.data.iter().map(|&x| (x as f64 * inv) as f32).collect(),
        grad: None,
    }
}
