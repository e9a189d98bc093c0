//! Per-op R-op rules: directional derivatives of outputs along input perturbations.

use std::sync::Arc;

use crate::builder as b;
use crate::error::{Error, Result};
use crate::graph::{apply1, ApplyNode, Var};
use crate::ops::grad::expand_composite;
use crate::ops::{Op, ScalarOp};
use crate::types::Dim;

/// Broadcasts a perturbation to the shape of `out` when it may be smaller.
fn widen(v: Var, out: &Var) -> Result<Var> {
    if v.ty().dims != out.ty().dims || v.ty().dims.iter().any(|d| *d == Dim::Unknown) {
        b::add(&b::zeros_like(out)?, &v)
    } else {
        Ok(v)
    }
}

fn or_zeros(v: &Option<Var>, like: &Var) -> Result<Var> {
    match v {
        Some(v) => Ok(v.clone()),
        None => b::zeros_like(like),
    }
}

fn sum_opt(a: Option<Var>, c: Option<Var>) -> Result<Option<Var>> {
    Ok(match (a, c) {
        (Some(a), Some(c)) => Some(b::add(&a, &c)?),
        (a, c) => a.or(c),
    })
}

/// R-op rule of `node`. `perts[i]` is the perturbation of input `i` (`None`
/// for zero). Returns the perturbation of each output (`None` for zero).
pub fn rop_rule(node: &Arc<ApplyNode>, perts: &[Option<Var>]) -> Result<Vec<Option<Var>>> {
    if let Op::Scan(_) = node.op {
        return crate::scan::rop::scan_rop(node, perts);
    }
    if perts.iter().all(|p| p.is_none()) {
        return Ok(vec![None; node.n_outputs()]);
    }
    let x = &node.inputs;
    let out = node.output(0);
    let one = |v: &Var| b::const_like(v, 1.0);
    let p0 = perts.first().cloned().flatten();
    let p1 = perts.get(1).cloned().flatten();
    use ScalarOp::*;
    let r: Option<Var> = match &node.op {
        Op::Elemwise(s) => {
            let unary = |f: &dyn Fn(&Var) -> Result<Var>| -> Result<Option<Var>> {
                match &p0 {
                    Some(d) => Ok(Some(f(d)?)),
                    None => Ok(None),
                }
            };
            match s {
                Add => sum_opt(p0, p1)?.map(|v| widen(v, &out)).transpose()?,
                Sub => {
                    let n1 = p1.map(|d| b::neg(&d)).transpose()?;
                    sum_opt(p0, n1)?.map(|v| widen(v, &out)).transpose()?
                }
                Mul => {
                    let a = p0.map(|d| b::mul(&d, &x[1])).transpose()?;
                    let c = p1.map(|d| b::mul(&x[0], &d)).transpose()?;
                    sum_opt(a, c)?.map(|v| widen(v, &out)).transpose()?
                }
                Div => {
                    let a = p0.map(|d| b::div(&d, &x[1])).transpose()?;
                    let c = p1
                        .map(|d| b::neg(&b::div(&b::mul(&x[0], &d)?, &b::sqr(&x[1])?)?))
                        .transpose()?;
                    sum_opt(a, c)?.map(|v| widen(v, &out)).transpose()?
                }
                Maximum => {
                    let a = p0.map(|d| b::mul(&d, &b::ge(&x[0], &x[1])?)).transpose()?;
                    let c = p1.map(|d| b::mul(&d, &b::lt(&x[0], &x[1])?)).transpose()?;
                    sum_opt(a, c)?.map(|v| widen(v, &out)).transpose()?
                }
                Gt | Lt | Ge => None,
                Neg => unary(&|d| b::neg(d))?,
                Exp => unary(&|d| b::mul(d, &out))?,
                Log => unary(&|d| b::div(d, &x[0]))?,
                Log1p => unary(&|d| b::div(d, &b::add(&one(&x[0]), &x[0])?))?,
                Sigmoid => unary(&|d| b::mul(d, &b::mul(&out, &b::sub(&one(&out), &out)?)?))?,
                Softplus => unary(&|d| b::mul(d, &b::sigmoid(&x[0])?))?,
                Tanh => unary(&|d| b::mul(d, &b::sub(&one(&out), &b::sqr(&out)?)?))?,
                Sqr => unary(&|d| b::mul(d, &b::scale(&x[0], 2.0)?))?,
                Pow(c) => unary(&|d| b::mul(d, &b::scale(&b::pow(&x[0], c - 1.0)?, *c)?))?,
            }
        }
        Op::Composite(c) => {
            let expanded = expand_composite(c, x)?;
            let pairs: Vec<(Var, Var)> =
                x.iter().zip(perts).filter_map(|(v, p)| p.clone().map(|p| (v.clone(), p))).collect();
            let (wrt, dirs): (Vec<Var>, Vec<Var>) = pairs.into_iter().unzip();
            crate::autodiff::rop(&[expanded], &wrt, &dirs)?.pop()
        }
        Op::Sum { axis } => p0.map(|d| apply1(Op::Sum { axis: *axis }, &[d])).transpose()?,
        Op::Max { axis } => match p0 {
            Some(d) => {
                let ones = b::add(&b::zeros_like(&out)?, &one(&out))?;
                let mask = apply1(Op::MaxGrad { axis: *axis }, &[x[0].clone(), ones])?;
                Some(apply1(Op::Sum { axis: *axis }, &[b::mul(&mask, &d)?])?)
            }
            None => None,
        },
        Op::Dot => {
            let a = p0.map(|d| b::dot(&d, &x[1])).transpose()?;
            let c = p1.map(|d| b::dot(&x[0], &d)).transpose()?;
            sum_opt(a, c)?
        }
        Op::Transpose => p0.map(|d| b::transpose(&d)).transpose()?,
        Op::Reshape(shape) => p0.map(|d| b::reshape(&d, shape)).transpose()?,
        Op::ReshapeLike => p0.map(|d| b::reshape_like(&d, &x[1])).transpose()?,
        Op::Softmax => p0.map(|d| apply1(Op::SoftmaxGrad, &[out.clone(), d])).transpose()?,
        Op::IfElse => {
            let t = perts.get(1).cloned().flatten();
            let e = perts.get(2).cloned().flatten();
            if t.is_none() && e.is_none() {
                None
            } else {
                Some(b::if_else(&x[0], &or_zeros(&t, &out)?, &or_zeros(&e, &out)?)?)
            }
        }
        Op::ZerosLike => None,
        Op::ReduceLike => p0.map(|d| b::reduce_like(&d, &x[1])).transpose()?,
        Op::ExpandAxis { axis } => p0.map(|d| b::expand_axis(&d, &x[1], *axis)).transpose()?,
        Op::MaxGrad { axis } => p1.map(|d| apply1(Op::MaxGrad { axis: *axis }, &[x[0].clone(), d])).transpose()?,
        Op::Index(i) => p0.map(|d| b::index(&d, *i)).transpose()?,
        Op::IncIndex(i) => {
            if p0.is_none() && p1.is_none() {
                None
            } else {
                Some(b::inc_index(&or_zeros(&p0, &x[0])?, &or_zeros(&p1, &x[1])?, *i)?)
            }
        }
        Op::Stack => {
            let parts: Vec<Var> = x.iter().zip(perts).map(|(v, p)| or_zeros(p, v)).collect::<Result<_>>()?;
            Some(b::stack(&parts)?)
        }
        Op::Concat => Some(b::concat(&or_zeros(&p0, &x[0])?, &or_zeros(&p1, &x[1])?)?),
        Op::SliceLike { start } => match p0 {
            Some(d) => {
                let mut ins = vec![d, x[1].clone()];
                ins.extend(x.get(2).cloned());
                Some(apply1(Op::SliceLike { start: *start }, &ins)?)
            }
            None => None,
        },
        Op::IncSlice { start } => {
            if p0.is_none() && p1.is_none() {
                None
            } else {
                let mut ins = vec![or_zeros(&p0, &x[0])?, or_zeros(&p1, &x[1])?];
                ins.extend(x.get(2).cloned());
                Some(apply1(Op::IncSlice { start: *start }, &ins)?)
            }
        }
        Op::ArgMax { .. } | Op::CrossEntropy | Op::SoftmaxGrad | Op::CrossEntropyGrad => {
            return Err(Error::RopUnsupported(node.op.name()))
        }
        Op::Scan(_) => unreachable!(),
    };
    Ok(vec![r])
}
