//! Graph-building functions, one per op.

use crate::error::Result;
use crate::graph::{apply1, Var};
use crate::ops::{Op, ScalarOp};
use crate::tensor::Tensor;
use crate::types::DType;

fn ew1(op: ScalarOp, x: &Var) -> Result<Var> {
    apply1(Op::Elemwise(op), &[x.clone()])
}

fn ew2(op: ScalarOp, x: &Var, y: &Var) -> Result<Var> {
    apply1(Op::Elemwise(op), &[x.clone(), y.clone()])
}

/// Scalar constant with the (floating) dtype of `like`.
pub fn const_like(like: &Var, v: f64) -> Var {
    let dtype = like.ty().dtype.to_float();
    Var::constant(Tensor::scalar_of(dtype, v))
}

pub fn add(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Add, x, y)
}

pub fn sub(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Sub, x, y)
}

pub fn mul(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Mul, x, y)
}

pub fn div(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Div, x, y)
}

pub fn maximum(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Maximum, x, y)
}

pub fn gt(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Gt, x, y)
}

pub fn lt(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Lt, x, y)
}

pub fn ge(x: &Var, y: &Var) -> Result<Var> {
    ew2(ScalarOp::Ge, x, y)
}

pub fn neg(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Neg, x)
}

pub fn exp(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Exp, x)
}

pub fn log(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Log, x)
}

pub fn log1p(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Log1p, x)
}

pub fn sigmoid(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Sigmoid, x)
}

pub fn softplus(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Softplus, x)
}

pub fn tanh(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Tanh, x)
}

pub fn sqr(x: &Var) -> Result<Var> {
    ew1(ScalarOp::Sqr, x)
}

pub fn pow(x: &Var, exponent: f64) -> Result<Var> {
    ew1(ScalarOp::Pow(exponent), x)
}

/// `x * c` for a scalar constant `c` of `x`'s float dtype.
pub fn scale(x: &Var, c: f64) -> Result<Var> {
    mul(x, &const_like(x, c))
}

pub fn sum(x: &Var) -> Result<Var> {
    apply1(Op::Sum { axis: None }, &[x.clone()])
}

pub fn sum_axis(x: &Var, axis: usize) -> Result<Var> {
    apply1(Op::Sum { axis: Some(axis) }, &[x.clone()])
}

pub fn max(x: &Var) -> Result<Var> {
    apply1(Op::Max { axis: None }, &[x.clone()])
}

pub fn max_axis(x: &Var, axis: usize) -> Result<Var> {
    apply1(Op::Max { axis: Some(axis) }, &[x.clone()])
}

pub fn argmax(x: &Var, axis: usize) -> Result<Var> {
    apply1(Op::ArgMax { axis }, &[x.clone()])
}

pub fn dot(a: &Var, b: &Var) -> Result<Var> {
    apply1(Op::Dot, &[a.clone(), b.clone()])
}

pub fn transpose(x: &Var) -> Result<Var> {
    apply1(Op::Transpose, &[x.clone()])
}

pub fn reshape(x: &Var, shape: &[i64]) -> Result<Var> {
    apply1(Op::Reshape(shape.to_vec()), &[x.clone()])
}

pub fn softmax(x: &Var) -> Result<Var> {
    apply1(Op::Softmax, &[x.clone()])
}

pub fn crossentropy(p: &Var, targets: &Var) -> Result<Var> {
    apply1(Op::CrossEntropy, &[p.clone(), targets.clone()])
}

pub fn if_else(cond: &Var, then: &Var, otherwise: &Var) -> Result<Var> {
    apply1(Op::IfElse, &[cond.clone(), then.clone(), otherwise.clone()])
}

pub fn zeros_like(x: &Var) -> Result<Var> {
    apply1(Op::ZerosLike, &[x.clone()])
}

/// Zeros of `x`'s type, as a constant when the shape is static.
pub fn zeros_of(x: &Var) -> Result<Var> {
    match x.ty().static_shape() {
        Some(shape) => Ok(Var::constant(Tensor::zeros(x.ty().dtype, &shape))),
        None => zeros_like(x),
    }
}

pub fn reduce_like(g: &Var, x: &Var) -> Result<Var> {
    apply1(Op::ReduceLike, &[g.clone(), x.clone()])
}

pub fn expand_axis(g: &Var, x: &Var, axis: Option<usize>) -> Result<Var> {
    apply1(Op::ExpandAxis { axis }, &[g.clone(), x.clone()])
}

pub fn reshape_like(g: &Var, x: &Var) -> Result<Var> {
    apply1(Op::ReshapeLike, &[g.clone(), x.clone()])
}

pub fn index(x: &Var, i: i64) -> Result<Var> {
    apply1(Op::Index(i), &[x.clone()])
}

pub fn inc_index(base: &Var, v: &Var, i: i64) -> Result<Var> {
    apply1(Op::IncIndex(i), &[base.clone(), v.clone()])
}

pub fn stack(xs: &[Var]) -> Result<Var> {
    apply1(Op::Stack, xs)
}

pub fn concat(a: &Var, b: &Var) -> Result<Var> {
    apply1(Op::Concat, &[a.clone(), b.clone()])
}

pub fn slice_like(x: &Var, like: &Var, start: usize) -> Result<Var> {
    apply1(Op::SliceLike { start }, &[x.clone(), like.clone()])
}

pub fn inc_slice(base: &Var, v: &Var, start: usize) -> Result<Var> {
    apply1(Op::IncSlice { start }, &[base.clone(), v.clone()])
}

/// Integer scalar constant.
pub fn int(v: i64) -> Var {
    Var::constant(Tensor::scalar_of(DType::I64, v as f64))
}
