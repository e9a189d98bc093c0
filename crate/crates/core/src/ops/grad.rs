//! Per-op gradient rules: symbolic input gradients given output gradients.

use std::sync::Arc;

use crate::builder as b;
use crate::error::{Error, Result};
use crate::graph::{ApplyNode, Var};
use crate::ops::{Composite, Op, Operand, ScalarOp};
use crate::types::{Dim, TensorType};

/// Whether a value of type `x` may have been broadcast to produce `out`.
fn may_broadcast(x: &TensorType, out: &TensorType) -> bool {
    x.dims != out.dims || x.dims.iter().any(|d| *d == Dim::Unknown)
}

/// Sums `g` back to the shape of `x` when broadcasting may have happened.
pub(crate) fn fit_to(g: Var, x: &Var) -> Result<Var> {
    if may_broadcast(x.ty(), g.ty()) {
        b::reduce_like(&g, x)
    } else {
        Ok(g)
    }
}

/// Rebuilds a composite as a chain of primitive elementwise nodes.
pub fn expand_composite(c: &Composite, inputs: &[Var]) -> Result<Var> {
    let mut regs: Vec<Var> = Vec::with_capacity(c.instrs.len());
    for ins in &c.instrs {
        let args: Vec<Var> = ins
            .args
            .iter()
            .map(|a| match *a {
                Operand::Input(i) => inputs[i].clone(),
                Operand::Reg(r) => regs[r].clone(),
                Operand::Const(bits) => Var::scalar(f64::from_bits(bits)),
            })
            .collect();
        regs.push(crate::graph::apply1(Op::Elemwise(ins.op), &args)?);
    }
    regs.pop().ok_or_else(|| Error::Usage("empty composite".into()))
}

fn non_diff(op: &Op) -> Error {
    Error::NonDifferentiable { op: op.name(), var: String::new() }
}

/// Gradient rule of `node`. `output_grads[i]` is the gradient of the cost
/// with respect to output `i` (`None` when no gradient flows there).
/// Returns one entry per input; `None` marks inputs that receive no
/// gradient (integer inputs, shape-only inputs, conditions).
pub fn grad_rule(node: &Arc<ApplyNode>, output_grads: &[Option<Var>]) -> Result<Vec<Option<Var>>> {
    if let Op::Scan(_) = node.op {
        return crate::scan::grad::scan_grad(node, output_grads);
    }
    let x = &node.inputs;
    let out = node.output(0);
    let g = match output_grads.first().cloned().flatten() {
        Some(g) => g,
        None => return Ok(vec![None; x.len()]),
    };
    let one = |v: &Var| b::const_like(v, 1.0);
    use ScalarOp::*;
    let grads: Vec<Option<Var>> = match &node.op {
        Op::Elemwise(s) => match s {
            Add => vec![Some(fit_to(g.clone(), &x[0])?), Some(fit_to(g, &x[1])?)],
            Sub => vec![Some(fit_to(g.clone(), &x[0])?), Some(fit_to(b::neg(&g)?, &x[1])?)],
            Mul => vec![
                Some(fit_to(b::mul(&g, &x[1])?, &x[0])?),
                Some(fit_to(b::mul(&g, &x[0])?, &x[1])?),
            ],
            Div => {
                let ga = b::div(&g, &x[1])?;
                let gb = b::neg(&b::mul(&g, &b::div(&x[0], &b::sqr(&x[1])?)?)?)?;
                vec![Some(fit_to(ga, &x[0])?), Some(fit_to(gb, &x[1])?)]
            }
            Maximum => {
                let ga = b::mul(&g, &b::ge(&x[0], &x[1])?)?;
                let gb = b::mul(&g, &b::lt(&x[0], &x[1])?)?;
                vec![Some(fit_to(ga, &x[0])?), Some(fit_to(gb, &x[1])?)]
            }
            Gt | Lt | Ge => vec![None, None],
            Neg => vec![Some(b::neg(&g)?)],
            Exp => vec![Some(b::mul(&g, &out)?)],
            Log => vec![Some(b::div(&g, &x[0])?)],
            Log1p => vec![Some(b::div(&g, &b::add(&one(&x[0]), &x[0])?)?)],
            Sigmoid => {
                let d = b::mul(&out, &b::sub(&one(&out), &out)?)?;
                vec![Some(b::mul(&g, &d)?)]
            }
            Softplus => vec![Some(b::mul(&g, &b::sigmoid(&x[0])?)?)],
            Tanh => vec![Some(b::mul(&g, &b::sub(&one(&out), &b::sqr(&out)?)?)?)],
            Sqr => vec![Some(b::mul(&g, &b::scale(&x[0], 2.0)?)?)],
            Pow(c) => {
                let d = b::scale(&b::pow(&x[0], c - 1.0)?, *c)?;
                vec![Some(b::mul(&g, &d)?)]
            }
        },
        Op::Composite(c) => {
            let expanded = expand_composite(c, x)?;
            let gs = crate::autodiff::lop(&[expanded], x, &[g])?;
            gs.into_iter().map(Some).collect()
        }
        Op::Sum { axis } => vec![Some(b::expand_axis(&g, &x[0], *axis)?)],
        Op::Max { axis } => vec![Some(crate::graph::apply1(Op::MaxGrad { axis: *axis }, &[x[0].clone(), g])?)],
        Op::Dot => {
            let (a, m) = (&x[0], &x[1]);
            match (a.ty().rank(), m.ty().rank()) {
                (1, 1) => vec![Some(b::mul(&g, m)?), Some(b::mul(&g, a)?)],
                (2, 1) => {
                    let outer = b::dot(&b::reshape(&g, &[-1, 1])?, &b::reshape(m, &[1, -1])?)?;
                    vec![Some(outer), Some(b::dot(&g, a)?)]
                }
                (1, 2) => {
                    let outer = b::dot(&b::reshape(a, &[-1, 1])?, &b::reshape(&g, &[1, -1])?)?;
                    vec![Some(b::dot(m, &g)?), Some(outer)]
                }
                _ => vec![Some(b::dot(&g, &b::transpose(m)?)?), Some(b::dot(&b::transpose(a)?, &g)?)],
            }
        }
        Op::Transpose => vec![Some(b::transpose(&g)?)],
        Op::Reshape(_) => vec![Some(b::reshape_like(&g, &x[0])?)],
        Op::ReshapeLike => vec![Some(b::reshape_like(&g, &x[0])?), None],
        Op::Softmax => vec![Some(crate::graph::apply1(Op::SoftmaxGrad, &[out, g])?)],
        Op::CrossEntropy => {
            vec![Some(crate::graph::apply1(Op::CrossEntropyGrad, &[x[0].clone(), x[1].clone(), g])?), None]
        }
        Op::IfElse => {
            let z = b::zeros_like(&g)?;
            vec![None, Some(b::if_else(&x[0], &g, &z)?), Some(b::if_else(&x[0], &z, &g)?)]
        }
        Op::ZerosLike => vec![None],
        Op::ReduceLike => vec![Some(b::add(&b::zeros_like(&x[0])?, &g)?), None],
        Op::ExpandAxis { axis } => {
            let back = match axis {
                Some(a) => b::sum_axis(&g, *a)?,
                None => b::sum(&g)?,
            };
            vec![Some(back), None]
        }
        Op::Index(i) => vec![Some(b::inc_index(&b::zeros_like(&x[0])?, &g, *i)?)],
        Op::IncIndex(i) => vec![Some(g.clone()), Some(b::index(&g, *i)?)],
        Op::Stack => (0..x.len()).map(|i| b::index(&g, i as i64).map(Some)).collect::<Result<_>>()?,
        Op::Concat => {
            let ga = b::slice_like(&g, &x[0], 0)?;
            let gb = crate::graph::apply1(Op::SliceLike { start: 0 }, &[g, x[1].clone(), x[0].clone()])?;
            vec![Some(ga), Some(gb)]
        }
        Op::SliceLike { start } => {
            let mut ins = vec![b::zeros_like(&x[0])?, g];
            ins.extend(x.get(2).cloned());
            let gx = crate::graph::apply1(Op::IncSlice { start: *start }, &ins)?;
            let mut r = vec![Some(gx), None];
            if x.len() == 3 {
                r.push(None);
            }
            r
        }
        Op::IncSlice { start } => {
            let mut ins = vec![g.clone(), x[1].clone()];
            ins.extend(x.get(2).cloned());
            let gv = crate::graph::apply1(Op::SliceLike { start: *start }, &ins)?;
            let mut r = vec![Some(g), Some(gv)];
            if x.len() == 3 {
                r.push(None);
            }
            r
        }
        Op::ArgMax { .. } | Op::MaxGrad { .. } | Op::SoftmaxGrad | Op::CrossEntropyGrad => {
            return Err(non_diff(&node.op))
        }
        Op::Scan(_) => unreachable!(),
    };
    Ok(grads)
}
