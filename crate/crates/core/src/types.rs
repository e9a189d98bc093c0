//! Static typing of graph variables.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    I64,
    F32,
    F64,
}

impl DType {
    pub fn is_float(self) -> bool {
        matches!(self, DType::F32 | DType::F64)
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::F32 => "f32",
            DType::I64 => "i64",
        }
    }

    pub fn parse(s: &str) -> Option<DType> {
        match s {
            "f64" => Some(DType::F64),
            "f32" => Some(DType::F32),
            "i64" => Some(DType::I64),
            _ => None,
        }
    }

    /// Result dtype of mixing two operands in an arithmetic op.
    pub fn promote(a: DType, b: DType) -> DType {
        a.max(b)
    }

    /// Dtype produced when a value must be floating point.
    pub fn to_float(self) -> DType {
        match self {
            DType::I64 => DType::F64,
            other => other,
        }
    }

    /// Whether a value of `self` can be converted to `target` without losing precision.
    pub fn converts_losslessly_to(self, target: DType) -> bool {
        matches!(
            (self, target),
            (DType::I64, _) | (DType::F32, DType::F32 | DType::F64) | (DType::F64, DType::F64)
        )
    }
}

impl Default for DType {
    fn default() -> Self {
        DType::F64
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Static extent of one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Known(usize),
    Unknown,
}

impl Dim {
    pub fn known(self) -> Option<usize> {
        match self {
            Dim::Known(n) => Some(n),
            Dim::Unknown => None,
        }
    }

    /// Whether a runtime extent is compatible with this static extent.
    pub fn admits(self, n: usize) -> bool {
        match self {
            Dim::Known(k) => k == n,
            Dim::Unknown => true,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Known(n) => write!(f, "{n}"),
            Dim::Unknown => f.write_str("?"),
        }
    }
}

/// Dtype plus rank plus per-dimension static extent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorType {
    pub dtype: DType,
    pub dims: Vec<Dim>,
}

impl TensorType {
    pub fn new(dtype: DType, dims: Vec<Dim>) -> Self {
        TensorType { dtype, dims }
    }

    pub fn scalar(dtype: DType) -> Self {
        TensorType { dtype, dims: Vec::new() }
    }

    pub fn vector(dtype: DType, n: Dim) -> Self {
        TensorType { dtype, dims: vec![n] }
    }

    pub fn matrix(dtype: DType, rows: Dim, cols: Dim) -> Self {
        TensorType { dtype, dims: vec![rows, cols] }
    }

    /// Fully static type for a concrete shape.
    pub fn of_shape(dtype: DType, shape: &[usize]) -> Self {
        TensorType { dtype, dims: shape.iter().map(|&n| Dim::Known(n)).collect() }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.dims.is_empty()
    }

    /// Static shape when every extent is known.
    pub fn static_shape(&self) -> Option<Vec<usize>> {
        self.dims.iter().map(|d| d.known()).collect()
    }

    pub fn with_dtype(&self, dtype: DType) -> Self {
        TensorType { dtype, dims: self.dims.clone() }
    }

    /// Drops the leading dimension (type of one time slice).
    pub fn slice_type(&self) -> Option<Self> {
        if self.dims.is_empty() {
            None
        } else {
            Some(TensorType { dtype: self.dtype, dims: self.dims[1..].to_vec() })
        }
    }

    /// Prepends a leading dimension.
    pub fn stacked(&self, lead: Dim) -> Self {
        let mut dims = Vec::with_capacity(self.dims.len() + 1);
        dims.push(lead);
        dims.extend_from_slice(&self.dims);
        TensorType { dtype: self.dtype, dims }
    }

    /// Whether a concrete shape conforms to this type.
    pub fn admits_shape(&self, shape: &[usize]) -> bool {
        shape.len() == self.dims.len() && self.dims.iter().zip(shape).all(|(d, &n)| d.admits(n))
    }
}

impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.dtype)?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_conversion_policy() {
        assert!(DType::I64.converts_losslessly_to(DType::F64));
        assert!(DType::F32.converts_losslessly_to(DType::F64));
        assert!(!DType::F64.converts_losslessly_to(DType::I64));
        assert!(!DType::F64.converts_losslessly_to(DType::F32));
    }

    #[test]
    fn display() {
        let t = TensorType::matrix(DType::F64, Dim::Known(3), Dim::Unknown);
        assert_eq!(t.to_string(), "f64[3,?]");
        assert_eq!(TensorType::scalar(DType::I64).to_string(), "i64[]");
    }
}
