//! Built-in node-local rewrite rules, in registration order.

use std::sync::Arc;

use super::{may_replace, RewriteRule, Stage, FOLD_LIMIT};
use crate::builder as b;
use crate::error::Result;
use crate::graph::{structurally_eq, ApplyNode, Var, VarKind};
use crate::ops::kernels::eval_kernel;
use crate::ops::{Op, ScalarOp};
use crate::tensor::{numel, Tensor};

fn elem(node: &ApplyNode) -> Option<ScalarOp> {
    match node.op {
        Op::Elemwise(s) => Some(s),
        _ => None,
    }
}

/// Inner op and input of `v` when it is the output of a unary elementwise op.
fn unary_of(v: &Var, op: ScalarOp) -> Option<Var> {
    let (n, _) = v.owner()?;
    (n.op == Op::Elemwise(op)).then(|| n.inputs[0].clone())
}

fn is_zero(v: &Var) -> bool {
    v.is_constant_fill(0.0) || matches!(v.owner_op(), Some(Op::ZerosLike))
}

fn is_one(v: &Var) -> bool {
    v.is_constant_fill(1.0)
}

/// Zeros of `out`'s type without computing `out`: a constant when the shape
/// is static, else `zeros_like` of an input with the same type.
fn zeros_for(node: &Arc<ApplyNode>) -> Result<Option<Var>> {
    let out = &node.output_types()[0];
    if let Some(shape) = out.static_shape() {
        return Ok(Some(Var::constant(Tensor::zeros(out.dtype, &shape))));
    }
    match node.inputs.iter().find(|v| v.ty() == out) {
        Some(like) => b::zeros_like(like).map(Some),
        None => Ok(None),
    }
}

/// `keep` when it can replace the node's output type-for-type.
fn pass_through(node: &Arc<ApplyNode>, keep: &Var) -> Option<Var> {
    may_replace(keep.ty(), &node.output_types()[0]).then(|| keep.clone())
}

fn sub_self_zero(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) == Some(ScalarOp::Sub) && structurally_eq(&n.inputs[0], &n.inputs[1]) {
        return zeros_for(n);
    }
    Ok(None)
}

fn add_neg_self_zero(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Add) {
        return Ok(None);
    }
    let (a, c) = (&n.inputs[0], &n.inputs[1]);
    let cancels = unary_of(c, ScalarOp::Neg).is_some_and(|x| structurally_eq(&x, a))
        || unary_of(a, ScalarOp::Neg).is_some_and(|x| structurally_eq(&x, c));
    if cancels {
        return zeros_for(n);
    }
    Ok(None)
}

fn neg_neg(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) == Some(ScalarOp::Neg) {
        if let Some(x) = unary_of(&n.inputs[0], ScalarOp::Neg) {
            return Ok(pass_through(n, &x));
        }
    }
    Ok(None)
}

fn add_zero(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Add) {
        return Ok(None);
    }
    let (a, c) = (&n.inputs[0], &n.inputs[1]);
    if is_zero(c) {
        if let Some(v) = pass_through(n, a) {
            return Ok(Some(v));
        }
    }
    if is_zero(a) {
        return Ok(pass_through(n, c));
    }
    Ok(None)
}

fn sub_zero(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) == Some(ScalarOp::Sub) && is_zero(&n.inputs[1]) {
        return Ok(pass_through(n, &n.inputs[0]));
    }
    Ok(None)
}

fn mul_one(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Mul) {
        return Ok(None);
    }
    let (a, c) = (&n.inputs[0], &n.inputs[1]);
    if is_one(c) {
        if let Some(v) = pass_through(n, a) {
            return Ok(Some(v));
        }
    }
    if is_one(a) {
        return Ok(pass_through(n, c));
    }
    Ok(None)
}

fn mul_zero(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) == Some(ScalarOp::Mul) && (is_zero(&n.inputs[0]) || is_zero(&n.inputs[1])) {
        return zeros_for(n);
    }
    Ok(None)
}

fn div_one(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) == Some(ScalarOp::Div) && is_one(&n.inputs[1]) {
        return Ok(pass_through(n, &n.inputs[0]));
    }
    Ok(None)
}

fn div_const_to_mul(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Div) || !n.output_types()[0].dtype.is_float() {
        return Ok(None);
    }
    let Some(c) = n.inputs[1].constant_value() else { return Ok(None) };
    if c.len() > FOLD_LIMIT || c.data().iter().any(|&v| v == 0.0) {
        return Ok(None);
    }
    let dtype = n.output_types()[0].dtype;
    let recip = Tensor::new(dtype, c.shape().to_vec(), c.data().iter().map(|v| 1.0 / v).collect())?;
    b::mul(&n.inputs[0], &Var::constant(recip)).map(Some)
}

fn sub_to_add_neg(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Sub) || !n.output_types()[0].dtype.is_float() {
        return Ok(None);
    }
    b::add(&n.inputs[0], &b::neg(&n.inputs[1])?).map(Some)
}

fn zeros_like_static(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if n.op != Op::ZerosLike {
        return Ok(None);
    }
    let ty = &n.output_types()[0];
    match ty.static_shape() {
        Some(shape) if numel(&shape) <= FOLD_LIMIT => Ok(Some(Var::constant(Tensor::zeros(ty.dtype, &shape)))),
        _ => Ok(None),
    }
}

fn reduce_like_noop(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if n.op != Op::ReduceLike {
        return Ok(None);
    }
    let (g, x) = (&n.inputs[0], &n.inputs[1]);
    if g.ty().static_shape().is_some() && g.ty() == x.ty() {
        return Ok(Some(g.clone()));
    }
    Ok(None)
}

fn log1p(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Log) {
        return Ok(None);
    }
    let Some((add, _)) = n.inputs[0].owner() else { return Ok(None) };
    if add.op != Op::Elemwise(ScalarOp::Add) {
        return Ok(None);
    }
    let (a, c) = (&add.inputs[0], &add.inputs[1]);
    let x = if is_one(a) && a.ty().is_scalar() {
        c
    } else if is_one(c) && c.ty().is_scalar() {
        a
    } else {
        return Ok(None);
    };
    b::log1p(x).map(Some)
}

fn log_sigmoid(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Log) {
        return Ok(None);
    }
    match unary_of(&n.inputs[0], ScalarOp::Sigmoid) {
        Some(x) => b::neg(&b::softplus(&b::neg(&x)?)?).map(Some),
        None => Ok(None),
    }
}

fn exp_log(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Exp) {
        return Ok(None);
    }
    Ok(unary_of(&n.inputs[0], ScalarOp::Log).and_then(|x| pass_through(n, &x)))
}

fn add_neg_to_sub(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) != Some(ScalarOp::Add) {
        return Ok(None);
    }
    let (a, c) = (&n.inputs[0], &n.inputs[1]);
    if let Some(y) = unary_of(c, ScalarOp::Neg) {
        return b::sub(a, &y).map(Some);
    }
    if let Some(y) = unary_of(a, ScalarOp::Neg) {
        return b::sub(c, &y).map(Some);
    }
    Ok(None)
}

fn mul_self_to_sqr(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if elem(n) == Some(ScalarOp::Mul) && n.inputs[0] == n.inputs[1] {
        return b::sqr(&n.inputs[0]).map(Some);
    }
    Ok(None)
}

fn constant_fold(n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if matches!(n.op, Op::Scan(_)) || n.n_outputs() != 1 {
        return Ok(None);
    }
    if !n.inputs.iter().all(|v| matches!(v.kind(), VarKind::Constant(_))) {
        return Ok(None);
    }
    if let Some(shape) = n.output_types()[0].static_shape() {
        if numel(&shape) > FOLD_LIMIT {
            return Ok(None);
        }
    }
    let ins: Vec<&Tensor> = n.inputs.iter().map(|v| v.constant_value().unwrap()).collect();
    let mut out = eval_kernel(&n.op, &ins)?;
    let t = out.pop().unwrap();
    if t.len() > FOLD_LIMIT {
        return Ok(None);
    }
    Ok(Some(Var::constant(t)))
}

/// Every built-in local rule. The order is the tie-break order.
pub fn builtin_rules() -> Vec<RewriteRule> {
    let r = |name, stage, apply| RewriteRule { name, stage, domain_unsafe: false, apply };
    use Stage::*;
    vec![
        r("sub_self_zero", Canonicalize, sub_self_zero),
        r("add_neg_self_zero", Canonicalize, add_neg_self_zero),
        r("neg_neg", Canonicalize, neg_neg),
        r("add_zero", Canonicalize, add_zero),
        r("sub_zero", Canonicalize, sub_zero),
        r("mul_one", Canonicalize, mul_one),
        r("mul_zero", Canonicalize, mul_zero),
        r("div_one", Canonicalize, div_one),
        r("div_const_to_mul", Canonicalize, div_const_to_mul),
        r("sub_to_add_neg", Canonicalize, sub_to_add_neg),
        r("zeros_like_static", Canonicalize, zeros_like_static),
        r("reduce_like_noop", Canonicalize, reduce_like_noop),
        r("log1p", Stabilize, log1p),
        r("log_sigmoid", Stabilize, log_sigmoid),
        RewriteRule { name: "exp_log", stage: Stabilize, domain_unsafe: true, apply: exp_log },
        r("add_neg_to_sub", Specialize, add_neg_to_sub),
        r("mul_self_to_sqr", Specialize, mul_self_to_sqr),
        r("constant_fold", Fold, constant_fold),
    ]
}
