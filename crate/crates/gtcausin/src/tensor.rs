//! Dense row-major `f64` tensor and the plain (no-gradient) kernels the
//! rest of the crate builds on.
//!
//! Sizes here are desk scale, so the kernels are straightforward loops;
//! `matmul` parallelizes over output rows (each row is produced by exactly
//! one task in a fixed inner order, keeping results bit-identical to
//! [`matmul_seq`] for any thread count).

use crate::error::{input_err, Error, Result};
use crate::par;
use serde::{Deserialize, Serialize};

/// Dense tensor of 64-bit reals in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Creates a tensor, rejecting shape/length mismatches and non-finite
    /// entries.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return input_err(format!("zero-sized dimension in shape {shape:?}"));
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return input_err(format!(
                "shape {shape:?} wants {len} entries, got {}",
                data.len()
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry {bad} in tensor")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Internal constructor for values produced by our own kernels.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![0.0; shape.iter().product()])
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_parts(vec![1], vec![v])
    }

    /// 2-D convenience constructor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return input_err("no rows");
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return input_err("ragged rows");
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(&[rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Number of rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let c = self.shape[1];
        self.data[i * c + j] = v;
    }

    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let (c, t) = (self.shape[1], self.shape[2]);
        self.data[(i * c + j) * t + k] = v;
    }

    /// Same data, new shape. Lengths must agree.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return input_err(format!(
                "cannot reshape {:?} ({} entries) to {shape:?}",
                self.shape,
                self.data.len()
            ));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn transposed(&self) -> Result<Self> {
        if self.rank() != 2 {
            return input_err("transpose expects a rank-2 tensor");
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_matmul_shapes(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.rank() != 2 || b.rank() != 2 {
        return input_err("matmul expects rank-2 tensors");
    }
    if a.cols() != b.rows() {
        return input_err(format!(
            "matmul shape mismatch: {:?} x {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok((a.rows(), a.cols(), b.cols()))
}

/// `a · b`, parallelized over output rows when the `parallel` feature is on.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = check_matmul_shapes(a, b)?;
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk_mut(&mut out, n, |i, row| {
        matmul_row(row, &ad[i * k..(i + 1) * k], bd, n);
    });
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Sequential reference implementation of [`matmul`]; bit-identical output.
pub fn matmul_seq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = check_matmul_shapes(a, b)?;
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        matmul_row(&mut out[i * n..(i + 1) * n], &ad[i * k..(i + 1) * k], bd, n);
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

#[inline]
fn matmul_row(row: &mut [f64], a_row: &[f64], b: &[f64], n: usize) {
    for (l, &av) in a_row.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        let b_row = &b[l * n..(l + 1) * n];
        for (o, &bv) in row.iter_mut().zip(b_row.iter()) {
            *o += av * bv;
        }
    }
}

/// `a · bᵀ`.
pub fn matmul_transpose_b(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return input_err(format!(
            "matmul_transpose_b shape mismatch: {:?} x {:?}ᵀ",
            a.shape(),
            b.shape()
        ));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk_mut(&mut out, n, |i, row| {
        let a_row = &ad[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let b_row = &bd[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for l in 0..k {
                acc += a_row[l] * b_row[l];
            }
            *o = acc;
        }
    });
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Row-wise softmax with max-subtraction for overflow safety.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return input_err("softmax_rows expects a rank-2 tensor");
    }
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &x.data()[i * n..(i + 1) * n];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let o = &mut out[i * n..(i + 1) * n];
        let mut sum = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            o[j] = e;
            sum += e;
        }
        for v in o.iter_mut() {
            *v /= sum;
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Concatenates rank-2 tensors along columns.
pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return input_err("concat_cols of nothing");
    }
    let m = parts[0].rows();
    if parts.iter().any(|p| p.rank() != 2 || p.rows() != m) {
        return input_err("concat_cols: row counts differ");
    }
    let total: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = vec![0.0; m * total];
    for i in 0..m {
        let mut off = 0;
        for p in parts {
            let c = p.cols();
            out[i * total + off..i * total + off + c]
                .copy_from_slice(&p.data()[i * c..(i + 1) * c]);
            off += c;
        }
    }
    Ok(Tensor::from_parts(vec![m, total], out))
}

/// Concatenates rank-2 tensors along rows.
pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return input_err("concat_rows of nothing");
    }
    let n = parts[0].cols();
    if parts.iter().any(|p| p.rank() != 2 || p.cols() != n) {
        return input_err("concat_rows: column counts differ");
    }
    let total: usize = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(total * n);
    for p in parts {
        data.extend_from_slice(p.data());
    }
    Ok(Tensor::from_parts(vec![total, n], data))
}
