//! Dense row-major tensors.
//!
//! Elements are held as `f64` regardless of dtype. `i64` tensors hold exact
//! integers and `f32` tensors are rounded to single precision whenever a
//! kernel writes them, so every dtype shares one kernel implementation.

use std::fmt;

use crate::error::{Error, Result};
use crate::types::{DType, TensorType};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Default for Tensor {
    fn default() -> Self {
        Tensor { dtype: DType::F64, shape: vec![0], data: Vec::new() }
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![0; shape.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        s[i] = acc;
        acc *= shape[i];
    }
    s
}

/// Numpy-style broadcast of two concrete shapes (right-aligned).
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

pub(crate) fn round_for(dtype: DType, v: f64) -> f64 {
    match dtype {
        DType::F64 => v,
        DType::F32 => v as f32 as f64,
        DType::I64 => v.trunc(),
    }
}

impl Tensor {
    pub fn new(dtype: DType, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if numel(&shape) != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                numel(&shape),
                data.len()
            )));
        }
        let mut t = Tensor { dtype, shape, data };
        if dtype != DType::F64 {
            t.round_in_place();
        }
        Ok(t)
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(DType::F64, shape, data)
    }

    pub fn from_i64(shape: Vec<usize>, data: Vec<i64>) -> Result<Tensor> {
        Tensor::new(DType::I64, shape, data.into_iter().map(|v| v as f64).collect())
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor { dtype: DType::F64, shape: vec![n], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::from_vec(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { dtype: DType::F64, shape: Vec::new(), data: vec![v] }
    }

    pub fn scalar_of(dtype: DType, v: f64) -> Tensor {
        Tensor { dtype, shape: Vec::new(), data: vec![round_for(dtype, v)] }
    }

    pub fn zeros(dtype: DType, shape: &[usize]) -> Tensor {
        Tensor { dtype, shape: shape.to_vec(), data: vec![0.0; numel(shape)] }
    }

    pub fn full(dtype: DType, shape: &[usize], v: f64) -> Tensor {
        Tensor { dtype, shape: shape.to_vec(), data: vec![round_for(dtype, v); numel(shape)] }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
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

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        if self.data.len() == 1 {
            Some(self.data[0])
        } else {
            None
        }
    }

    pub fn capacity(&self) -> usize {
        self.data.capacity()
    }

    /// Static type describing exactly this tensor.
    pub fn tensor_type(&self) -> TensorType {
        TensorType::of_shape(self.dtype, &self.shape)
    }

    pub fn conforms_to(&self, ty: &TensorType) -> bool {
        self.dtype == ty.dtype && ty.admits_shape(&self.shape)
    }

    /// Re-targets this tensor to a new dtype and shape, keeping the allocation
    /// when possible. Element values are unspecified afterwards.
    pub fn reset(&mut self, dtype: DType, shape: &[usize]) {
        self.dtype = dtype;
        if self.shape.as_slice() != shape {
            self.shape.clear();
            self.shape.extend_from_slice(shape);
        }
        let n = numel(shape);
        if self.data.len() != n {
            self.data.clear();
            self.data.resize(n, 0.0);
        }
    }

    /// Copies `other` into this tensor, reusing the allocation.
    pub fn assign(&mut self, other: &Tensor) {
        self.reset(other.dtype, &other.shape);
        self.data.copy_from_slice(&other.data);
    }

    pub fn round_in_place(&mut self) {
        let dtype = self.dtype;
        if dtype != DType::F64 {
            for v in &mut self.data {
                *v = round_for(dtype, *v);
            }
        }
    }

    /// Converts to `dtype`, rounding values.
    pub fn cast(&self, dtype: DType) -> Tensor {
        let mut t = Tensor { dtype, shape: self.shape.clone(), data: self.data.clone() };
        t.round_in_place();
        t
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Tensor> {
        if numel(&shape) != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Length of the leading axis.
    pub fn leading(&self) -> Option<usize> {
        self.shape.first().copied()
    }

    /// Number of elements in one leading-axis slice.
    pub fn slice_len(&self) -> usize {
        numel(self.shape.get(1..).unwrap_or(&[]))
    }

    /// Copies slice `i` of the leading axis into `out`.
    pub fn slice_into(&self, i: usize, out: &mut Tensor) {
        let n = self.slice_len();
        out.reset(self.dtype, &self.shape[1..]);
        out.data.copy_from_slice(&self.data[i * n..(i + 1) * n]);
    }

    pub fn slice(&self, i: usize) -> Tensor {
        let mut out = Tensor::default();
        self.slice_into(i, &mut out);
        out
    }

    /// Writes `src` into slice `i` of the leading axis.
    pub fn set_slice(&mut self, i: usize, src: &Tensor) {
        let n = self.slice_len();
        self.data[i * n..(i + 1) * n].copy_from_slice(&src.data);
    }

    /// Largest absolute elementwise difference, infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| if a == b { 0.0 } else { (a - b).abs() })
            .fold(0.0, f64::max)
    }

    /// Largest elementwise relative difference, with denominator `max(|a|, |b|, floor)`.
    /// Matching NaNs and equal infinities count as agreement.
    pub fn max_rel_diff(&self, other: &Tensor, floor: f64) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| rel_diff(a, b, floor))
            .fold(0.0, f64::max)
    }
}

/// Relative difference of two scalars with denominator `max(|a|, |b|, floor)`.
pub fn rel_diff(a: f64, b: f64, floor: f64) -> f64 {
    if a == b || (a.is_nan() && b.is_nan()) {
        return 0.0;
    }
    let d = (a - b).abs();
    if !d.is_finite() {
        return f64::INFINITY;
    }
    d / a.abs().max(b.abs()).max(floor)
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn rec(
            f: &mut fmt::Formatter<'_>,
            t: &Tensor,
            dim: usize,
            offset: usize,
            st: &[usize],
        ) -> fmt::Result {
            if dim == t.shape.len() {
                let v = t.data[offset];
                return if t.dtype == DType::I64 { write!(f, "{}", v as i64) } else { write!(f, "{v}") };
            }
            f.write_str("[")?;
            for i in 0..t.shape[dim] {
                if i > 0 {
                    f.write_str(", ")?;
                }
                rec(f, t, dim + 1, offset + i * st[dim], st)?;
            }
            f.write_str("]")
        }
        rec(f, self, 0, 0, &strides(&self.shape))
    }
}
