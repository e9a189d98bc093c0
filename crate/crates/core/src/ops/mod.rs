//! The operation library.
//!
//! Each [`Op`] carries a type-inference rule ([`Op::infer`]), a direct numeric
//! kernel ([`kernels::eval`]), and where defined a gradient rule
//! ([`grad::grad_rule`]) and an R-op rule ([`rop::rop_rule`]).

use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scan::ScanOp;
use crate::types::{DType, Dim, TensorType};

pub mod grad;
pub mod kernels;
pub mod rop;
mod scalar;

pub use scalar::{sigmoid, softplus, Composite, Instr, Operand, ScalarOp};

#[derive(Debug, Clone)]
pub enum Op {
    Elemwise(ScalarOp),
    /// Fused chain of elementwise ops; produced only by the fuser.
    Composite(Arc<Composite>),
    Sum { axis: Option<usize> },
    Max { axis: Option<usize> },
    ArgMax { axis: usize },
    Dot,
    Transpose,
    /// Target shape; at most one entry may be -1 (inferred).
    Reshape(Vec<i64>),
    /// Row-wise softmax (whole vector for rank 1).
    Softmax,
    /// `-log p[target]` per row of a probability matrix.
    CrossEntropy,
    /// Lazy conditional: `(cond, then, else)`.
    IfElse,

    // Helper ops emitted by gradient and loop construction.
    ZerosLike,
    /// `(g, x)`: sums `g` over broadcast dimensions down to the shape of `x`.
    ReduceLike,
    /// `(g, x)`: broadcasts a reduction result back along `axis` to the shape of `x`.
    ExpandAxis { axis: Option<usize> },
    /// `(g, x)`: reshapes `g` to the runtime shape of `x`.
    ReshapeLike,
    /// `(x, g)`: routes `g` to the maxima of `x` along `axis`.
    MaxGrad { axis: Option<usize> },
    /// `(softmax_out, g)`.
    SoftmaxGrad,
    /// `(p, targets, g)`.
    CrossEntropyGrad,
    /// Slice of the leading axis; negative indices count from the end.
    Index(i64),
    /// `(base, v)`: `base` with `v` added into leading slice `i`.
    IncIndex(i64),
    /// Stacks its inputs along a new leading axis.
    Stack,
    /// Concatenates two tensors along the leading axis.
    Concat,
    /// `(x, like[, offset_like])`: `x[s .. s + len(like)]` where
    /// `s = start + len(offset_like)`.
    SliceLike { start: usize },
    /// `(base, v[, offset_like])`: adds `v` into `base[s .. s + len(v)]`.
    IncSlice { start: usize },
    Scan(Arc<ScanOp>),
}

impl PartialEq for Op {
    fn eq(&self, other: &Self) -> bool {
        use Op::*;
        match (self, other) {
            (Elemwise(a), Elemwise(b)) => a == b,
            (Composite(a), Composite(b)) => a == b,
            (Sum { axis: a }, Sum { axis: b }) => a == b,
            (Max { axis: a }, Max { axis: b }) => a == b,
            (ArgMax { axis: a }, ArgMax { axis: b }) => a == b,
            (Reshape(a), Reshape(b)) => a == b,
            (ExpandAxis { axis: a }, ExpandAxis { axis: b }) => a == b,
            (MaxGrad { axis: a }, MaxGrad { axis: b }) => a == b,
            (Index(a), Index(b)) => a == b,
            (IncIndex(a), IncIndex(b)) => a == b,
            (SliceLike { start: a }, SliceLike { start: b }) => a == b,
            (IncSlice { start: a }, IncSlice { start: b }) => a == b,
            (Scan(a), Scan(b)) => Arc::ptr_eq(a, b),
            (a, b) => std::mem::discriminant(a) == std::mem::discriminant(b) && a.is_unit_variant(),
        }
    }
}

impl Eq for Op {}

impl Hash for Op {
    fn hash<H: Hasher>(&self, state: &mut H) {
        use Op::*;
        std::mem::discriminant(self).hash(state);
        match self {
            Elemwise(s) => s.hash(state),
            Composite(c) => c.hash(state),
            Sum { axis } | Max { axis } | ExpandAxis { axis } | MaxGrad { axis } => axis.hash(state),
            ArgMax { axis } => axis.hash(state),
            Reshape(s) => s.hash(state),
            Index(i) | IncIndex(i) => i.hash(state),
            SliceLike { start } | IncSlice { start } => start.hash(state),
            Scan(s) => (Arc::as_ptr(s) as usize).hash(state),
            _ => {}
        }
    }
}

/// Catalog entry describing one op kind.
#[derive(Debug, Clone, Serialize)]
pub struct OpInfo {
    pub name: &'static str,
    pub has_grad: bool,
    pub has_rop: bool,
    pub lazy: bool,
    pub elementwise: bool,
}

fn info(name: &'static str, has_grad: bool, has_rop: bool) -> OpInfo {
    OpInfo { name, has_grad, has_rop, lazy: false, elementwise: false }
}

/// The user-facing op catalog.
pub fn op_set() -> Vec<OpInfo> {
    use ScalarOp::*;
    let mut v: Vec<OpInfo> = [Add, Sub, Mul, Div, Neg, Exp, Log, Log1p, Sigmoid, Softplus, Tanh, Sqr, Pow(2.0), Maximum, Gt, Lt, Ge]
        .into_iter()
        .map(|s| OpInfo { name: s.name(), has_grad: true, has_rop: true, lazy: false, elementwise: true })
        .collect();
    v.extend([
        info("sum", true, true),
        info("max", true, true),
        info("argmax", false, false),
        info("dot", true, true),
        info("transpose", true, true),
        info("reshape", true, true),
        info("softmax", true, true),
        info("crossentropy", true, false),
        OpInfo { name: "if_else", has_grad: true, has_rop: true, lazy: true, elementwise: false },
        OpInfo { name: "composite", has_grad: true, has_rop: true, lazy: false, elementwise: true },
        info("scan", true, true),
    ]);
    v
}

fn arity_err(op: &str, want: &str, got: usize) -> Error {
    Error::ty(op, None, format!("expected {want} inputs, got {got}"))
}

/// Static elementwise broadcast of several types.
pub fn broadcast_types(op: &str, tys: &[&TensorType]) -> Result<Vec<Dim>> {
    let rank = tys.iter().map(|t| t.rank()).max().unwrap_or(0);
    let mut out = vec![Dim::Known(1); rank];
    for (idx, t) in tys.iter().enumerate() {
        let off = rank - t.rank();
        for (i, &d) in t.dims.iter().enumerate() {
            let cur = out[off + i];
            out[off + i] = match (cur, d) {
                (Dim::Known(1), d) => d,
                (c, Dim::Known(1)) => c,
                (Dim::Known(a), Dim::Known(b)) if a == b => Dim::Known(a),
                (Dim::Known(a), Dim::Known(b)) => {
                    return Err(Error::ty(op, Some(idx), format!("cannot broadcast extent {b} against {a}")))
                }
                (Dim::Known(a), Dim::Unknown) | (Dim::Unknown, Dim::Known(a)) => Dim::Known(a),
                (Dim::Unknown, Dim::Unknown) => Dim::Unknown,
            };
        }
    }
    Ok(out)
}

fn promote_all(tys: &[&TensorType]) -> DType {
    tys.iter().map(|t| t.dtype).fold(DType::I64, DType::promote)
}

fn reduce_dims(op: &str, t: &TensorType, axis: Option<usize>) -> Result<Vec<Dim>> {
    match axis {
        None => Ok(Vec::new()),
        Some(a) if a < t.rank() => {
            let mut d = t.dims.clone();
            d.remove(a);
            Ok(d)
        }
        Some(a) => Err(Error::ty(op, Some(0), format!("axis {a} out of range for rank {}", t.rank()))),
    }
}

fn lead_dim(op: &str, t: &TensorType, idx: usize) -> Result<Dim> {
    t.dims.first().copied().ok_or_else(|| Error::ty(op, Some(idx), "expected rank >= 1"))
}

impl Op {
    fn is_unit_variant(&self) -> bool {
        use Op::*;
        matches!(
            self,
            Dot | Transpose
                | Softmax
                | CrossEntropy
                | IfElse
                | ZerosLike
                | ReduceLike
                | ReshapeLike
                | SoftmaxGrad
                | CrossEntropyGrad
                | Stack
                | Concat
        )
    }

    pub fn name(&self) -> String {
        use Op::*;
        match self {
            Elemwise(s) => s.name().to_string(),
            Composite(c) => c.name(),
            Sum { .. } => "sum".into(),
            Max { .. } => "max".into(),
            ArgMax { .. } => "argmax".into(),
            Dot => "dot".into(),
            Transpose => "transpose".into(),
            Reshape(_) => "reshape".into(),
            Softmax => "softmax".into(),
            CrossEntropy => "crossentropy".into(),
            IfElse => "if_else".into(),
            ZerosLike => "zeros_like".into(),
            ReduceLike => "reduce_like".into(),
            ExpandAxis { .. } => "expand_axis".into(),
            ReshapeLike => "reshape_like".into(),
            MaxGrad { .. } => "max_grad".into(),
            SoftmaxGrad => "softmax_grad".into(),
            CrossEntropyGrad => "crossentropy_grad".into(),
            Index(_) => "index".into(),
            IncIndex(_) => "inc_index".into(),
            Stack => "stack".into(),
            Concat => "concat".into(),
            SliceLike { .. } => "slice_like".into(),
            IncSlice { .. } => "inc_slice".into(),
            Scan(_) => "scan".into(),
        }
    }

    pub fn is_lazy(&self) -> bool {
        matches!(self, Op::IfElse)
    }

    pub fn is_elementwise(&self) -> bool {
        matches!(self, Op::Elemwise(_) | Op::Composite(_))
    }

    /// The scalar function mapped by an elementwise op.
    pub fn scalar_body(&self) -> Option<ScalarOp> {
        match self {
            Op::Elemwise(s) => Some(*s),
            _ => None,
        }
    }

    pub fn as_scan(&self) -> Option<&Arc<ScanOp>> {
        match self {
            Op::Scan(s) => Some(s),
            _ => None,
        }
    }

    /// Output types for the given input types.
    pub fn infer(&self, tys: &[&TensorType]) -> Result<Vec<TensorType>> {
        use Op::*;
        let name = self.name();
        let n = tys.len();
        let one = |t: TensorType| Ok(vec![t]);
        match self {
            Elemwise(s) => {
                if n != s.arity() {
                    return Err(arity_err(&name, &s.arity().to_string(), n));
                }
                let dims = broadcast_types(&name, tys)?;
                let mut dt = promote_all(tys);
                if s.forces_float() {
                    dt = dt.to_float();
                }
                one(TensorType::new(dt, dims))
            }
            Composite(c) => {
                if n != c.n_inputs {
                    return Err(arity_err(&name, &c.n_inputs.to_string(), n));
                }
                let dims = broadcast_types(&name, tys)?;
                let mut dt = promote_all(tys);
                if c.forces_float() {
                    dt = dt.to_float();
                }
                one(TensorType::new(dt, dims))
            }
            Sum { axis } | Max { axis } => {
                if n != 1 {
                    return Err(arity_err(&name, "1", n));
                }
                one(TensorType::new(tys[0].dtype, reduce_dims(&name, tys[0], *axis)?))
            }
            ArgMax { axis } => {
                if n != 1 {
                    return Err(arity_err(&name, "1", n));
                }
                one(TensorType::new(DType::I64, reduce_dims(&name, tys[0], Some(*axis))?))
            }
            Dot => {
                if n != 2 {
                    return Err(arity_err(&name, "2", n));
                }
                let (a, b) = (tys[0], tys[1]);
                let dt = DType::promote(a.dtype, b.dtype);
                let (ka, kb, dims) = match (a.rank(), b.rank()) {
                    (1, 1) => (a.dims[0], b.dims[0], vec![]),
                    (2, 1) => (a.dims[1], b.dims[0], vec![a.dims[0]]),
                    (1, 2) => (a.dims[0], b.dims[0], vec![b.dims[1]]),
                    (2, 2) => (a.dims[1], b.dims[0], vec![a.dims[0], b.dims[1]]),
                    (ra, rb) => {
                        let idx = if ra == 1 || ra == 2 { 1 } else { 0 };
                        return Err(Error::ty(&name, Some(idx), format!("unsupported ranks {ra} and {rb}")));
                    }
                };
                if let (Dim::Known(x), Dim::Known(y)) = (ka, kb) {
                    if x != y {
                        return Err(Error::ty(&name, Some(1), format!("inner dimension mismatch: {x} vs {y}")));
                    }
                }
                one(TensorType::new(dt, dims))
            }
            Transpose => {
                if n != 1 {
                    return Err(arity_err(&name, "1", n));
                }
                let mut d = tys[0].dims.clone();
                d.reverse();
                one(TensorType::new(tys[0].dtype, d))
            }
            Reshape(shape) => {
                if n != 1 {
                    return Err(arity_err(&name, "1", n));
                }
                let neg = shape.iter().filter(|&&s| s == -1).count();
                if neg > 1 || shape.iter().any(|&s| s < -1) {
                    return Err(Error::ty(&name, None, format!("invalid target shape {shape:?}")));
                }
                let total = tys[0].static_shape().map(|s| s.iter().product::<usize>());
                let known: usize = shape.iter().filter(|&&s| s >= 0).map(|&s| s as usize).product();
                let mut dims = Vec::with_capacity(shape.len());
                for &s in shape {
                    if s >= 0 {
                        dims.push(Dim::Known(s as usize));
                    } else {
                        dims.push(match total {
                            Some(t) if known > 0 && t % known == 0 => Dim::Known(t / known),
                            Some(t) => {
                                return Err(Error::ty(&name, Some(0), format!("cannot reshape {t} elements to {shape:?}")))
                            }
                            None => Dim::Unknown,
                        });
                    }
                }
                if neg == 0 {
                    if let Some(t) = total {
                        if t != known {
                            return Err(Error::ty(&name, Some(0), format!("cannot reshape {t} elements to {shape:?}")));
                        }
                    }
                }
                one(TensorType::new(tys[0].dtype, dims))
            }
            Softmax => {
                if n != 1 {
                    return Err(arity_err(&name, "1", n));
                }
                if !(1..=2).contains(&tys[0].rank()) {
                    return Err(Error::ty(&name, Some(0), "expected a vector or matrix"));
                }
                one(tys[0].with_dtype(tys[0].dtype.to_float()))
            }
            CrossEntropy => {
                if n != 2 {
                    return Err(arity_err(&name, "2", n));
                }
                let (p, t) = (tys[0], tys[1]);
                if t.dtype != DType::I64 {
                    return Err(Error::ty(&name, Some(1), "targets must be i64"));
                }
                match (p.rank(), t.rank()) {
                    (2, 1) => {
                        if let (Dim::Known(a), Dim::Known(b)) = (p.dims[0], t.dims[0]) {
                            if a != b {
                                return Err(Error::ty(&name, Some(1), format!("{b} targets for {a} rows")));
                            }
                        }
                        let rows = if p.dims[0] == Dim::Unknown { t.dims[0] } else { p.dims[0] };
                        one(TensorType::vector(p.dtype.to_float(), rows))
                    }
                    (1, 0) => one(TensorType::scalar(p.dtype.to_float())),
                    _ => Err(Error::ty(&name, Some(0), "expected (matrix, vector) or (vector, scalar)")),
                }
            }
            IfElse => {
                if n != 3 {
                    return Err(arity_err(&name, "3", n));
                }
                if !tys[0].is_scalar() {
                    return Err(Error::ty(&name, Some(0), "condition must be a scalar"));
                }
                // Branches may disagree on static extents; those become unknown.
                if tys[1].dtype != tys[2].dtype || tys[1].rank() != tys[2].rank() {
                    return Err(Error::ty(&name, Some(2), format!("branch types differ: {} vs {}", tys[1], tys[2])));
                }
                let dims = tys[1].dims.iter().zip(&tys[2].dims).map(|(a, c)| if a == c { *a } else { Dim::Unknown }).collect();
                one(TensorType::new(tys[1].dtype, dims))
            }
            ZerosLike => {
                if n != 1 {
                    return Err(arity_err(&name, "1", n));
                }
                one(tys[0].clone())
            }
            ReduceLike | ExpandAxis { .. } | ReshapeLike => {
                if n != 2 {
                    return Err(arity_err(&name, "2", n));
                }
                if let ExpandAxis { axis } = self {
                    let expect = reduce_dims(&name, tys[1], *axis)?;
                    if expect.len() != tys[0].rank() {
                        return Err(Error::ty(&name, Some(0), "rank does not match the reduced shape"));
                    }
                }
                one(TensorType::new(tys[0].dtype, tys[1].dims.clone()))
            }
            MaxGrad { axis } => {
                if n != 2 {
                    return Err(arity_err(&name, "2", n));
                }
                reduce_dims(&name, tys[0], *axis)?;
                one(tys[0].with_dtype(tys[1].dtype))
            }
            SoftmaxGrad => {
                if n != 2 {
                    return Err(arity_err(&name, "2", n));
                }
                one(tys[0].clone())
            }
            CrossEntropyGrad => {
                if n != 3 {
                    return Err(arity_err(&name, "3", n));
                }
                one(tys[0].clone())
            }
            Index(i) => {
                if n != 1 {
                    return Err(arity_err(&name, "1", n));
                }
                let lead = lead_dim(&name, tys[0], 0)?;
                if let Dim::Known(len) = lead {
                    let ok = if *i >= 0 { (*i as usize) < len } else { i.unsigned_abs() as usize <= len };
                    if !ok {
                        return Err(Error::ty(&name, Some(0), format!("index {i} out of range for length {len}")));
                    }
                }
                one(tys[0].slice_type().unwrap())
            }
            IncIndex(_) => {
                if n != 2 {
                    return Err(arity_err(&name, "2", n));
                }
                lead_dim(&name, tys[0], 0)?;
                let st = tys[0].slice_type().unwrap();
                if st.dims.len() != tys[1].rank() {
                    return Err(Error::ty(&name, Some(1), format!("expected slice type {st}, got {}", tys[1])));
                }
                one(tys[0].clone())
            }
            Stack => {
                if n == 0 {
                    return Err(arity_err(&name, "at least 1", 0));
                }
                for (i, t) in tys.iter().enumerate().skip(1) {
                    if *t != tys[0] {
                        return Err(Error::ty(&name, Some(i), format!("type {t} differs from {}", tys[0])));
                    }
                }
                one(tys[0].stacked(Dim::Known(n)))
            }
            Concat => {
                if n != 2 {
                    return Err(arity_err(&name, "2", n));
                }
                let (a, b) = (tys[0], tys[1]);
                let la = lead_dim(&name, a, 0)?;
                let lb = lead_dim(&name, b, 1)?;
                if a.rank() != b.rank() || a.dtype != b.dtype {
                    return Err(Error::ty(&name, Some(1), format!("cannot concatenate {a} and {b}")));
                }
                let mut dims = Vec::with_capacity(a.rank());
                dims.push(match (la, lb) {
                    (Dim::Known(x), Dim::Known(y)) => Dim::Known(x + y),
                    _ => Dim::Unknown,
                });
                for (i, (x, y)) in a.dims[1..].iter().zip(&b.dims[1..]).enumerate() {
                    dims.push(match (x, y) {
                        (Dim::Known(p), Dim::Known(q)) if p != q => {
                            return Err(Error::ty(&name, Some(1), format!("trailing dim {} differs", i + 1)))
                        }
                        (Dim::Known(p), _) | (_, Dim::Known(p)) => Dim::Known(*p),
                        _ => Dim::Unknown,
                    });
                }
                one(TensorType::new(a.dtype, dims))
            }
            SliceLike { .. } => {
                if n != 2 && n != 3 {
                    return Err(arity_err(&name, "2 or 3", n));
                }
                lead_dim(&name, tys[0], 0)?;
                let lead = lead_dim(&name, tys[1], 1)?;
                let mut dims = tys[0].dims.clone();
                dims[0] = lead;
                one(TensorType::new(tys[0].dtype, dims))
            }
            IncSlice { .. } => {
                if n != 2 && n != 3 {
                    return Err(arity_err(&name, "2 or 3", n));
                }
                lead_dim(&name, tys[0], 0)?;
                if tys[0].rank() != tys[1].rank() {
                    return Err(Error::ty(&name, Some(1), "rank mismatch"));
                }
                one(tys[0].clone())
            }
            Scan(s) => s.infer(tys),
        }
    }
}
