//! Direct numeric kernels.
//!
//! Kernels write into caller-provided output tensors so the runtime can reuse
//! buffers between calls.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::ops::{Composite, Instr, Op, Operand, ScalarOp};
use crate::tensor::{broadcast_shapes, numel, strides, Tensor};
use crate::types::DType;

/// Evaluates `op` on concrete inputs, returning fresh outputs.
pub fn eval_kernel(op: &Op, inputs: &[&Tensor]) -> Result<Vec<Tensor>> {
    if let Op::Scan(scan) = op {
        return crate::scan::exec::eval_scan(scan, inputs);
    }
    let mut out = vec![Tensor::default()];
    eval_into(op, inputs, &mut out)?;
    Ok(out)
}

fn want(op: &Op, inputs: &[&Tensor], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::kernel(&op.name(), format!("expected {n} inputs, got {}", inputs.len())));
    }
    Ok(())
}

fn want_float(op: &Op, t: &Tensor, idx: usize) -> Result<()> {
    if !t.dtype().is_float() {
        return Err(Error::kernel(&op.name(), format!("input {idx}: unexpected dtype {}", t.dtype())));
    }
    Ok(())
}

fn resolve_index(op: &Op, i: i64, len: usize) -> Result<usize> {
    let idx = if i < 0 { len as i64 + i } else { i };
    if idx < 0 || idx as usize >= len {
        return Err(Error::kernel(&op.name(), format!("index {i} out of range for length {len}")));
    }
    Ok(idx as usize)
}

/// Runs a single-output kernel into `out[0]`.
pub fn eval_into(op: &Op, inputs: &[&Tensor], out: &mut [Tensor]) -> Result<()> {
    let o = &mut out[0];
    match op {
        Op::Elemwise(s) => {
            want(op, inputs, s.arity())?;
            let args: Vec<Operand> = (0..s.arity()).map(Operand::Input).collect();
            let single = Composite { n_inputs: s.arity(), instrs: vec![Instr { op: *s, args }] };
            elementwise(op, &single, inputs, o)?;
        }
        Op::Composite(c) => {
            want(op, inputs, c.n_inputs)?;
            elementwise(op, c, inputs, o)?;
        }
        Op::Sum { axis } => {
            want(op, inputs, 1)?;
            reduce(op, inputs[0], *axis, o, 0.0, |acc, v| acc + v)?;
        }
        Op::Max { axis } => {
            want(op, inputs, 1)?;
            reduce(op, inputs[0], *axis, o, f64::NEG_INFINITY, |acc, v| if v > acc || v.is_nan() { v } else { acc })?;
        }
        Op::ArgMax { axis } => {
            want(op, inputs, 1)?;
            argmax(op, inputs[0], *axis, o)?;
        }
        Op::Dot => {
            want(op, inputs, 2)?;
            dot(op, inputs[0], inputs[1], o)?;
        }
        Op::Transpose => {
            want(op, inputs, 1)?;
            transpose(inputs[0], o);
        }
        Op::Reshape(shape) => {
            want(op, inputs, 1)?;
            let x = inputs[0];
            let target = resolve_shape(op, shape, x.len())?;
            o.reset(x.dtype(), &target);
            o.data_mut().copy_from_slice(x.data());
        }
        Op::ReshapeLike => {
            want(op, inputs, 2)?;
            let (g, x) = (inputs[0], inputs[1]);
            if g.len() != x.len() {
                return Err(Error::kernel(&op.name(), format!("cannot reshape {:?} to {:?}", g.shape(), x.shape())));
            }
            o.reset(g.dtype(), x.shape());
            o.data_mut().copy_from_slice(g.data());
        }
        Op::Softmax => {
            want(op, inputs, 1)?;
            softmax(op, inputs[0], o)?;
        }
        Op::CrossEntropy => {
            want(op, inputs, 2)?;
            crossentropy(op, inputs[0], inputs[1], o)?;
        }
        Op::IfElse => {
            want(op, inputs, 3)?;
            let c = inputs[0].item().ok_or_else(|| Error::kernel("if_else", "condition must be a scalar"))?;
            o.assign(if c != 0.0 { inputs[1] } else { inputs[2] });
        }
        Op::ZerosLike => {
            want(op, inputs, 1)?;
            let x = inputs[0];
            o.reset(x.dtype(), x.shape());
            o.data_mut().fill(0.0);
        }
        Op::ReduceLike => {
            want(op, inputs, 2)?;
            reduce_like(op, inputs[0], inputs[1], o)?;
        }
        Op::ExpandAxis { axis } => {
            want(op, inputs, 2)?;
            expand_axis(op, inputs[0], inputs[1], *axis, o)?;
        }
        Op::MaxGrad { axis } => {
            want(op, inputs, 2)?;
            max_grad(op, inputs[0], inputs[1], *axis, o)?;
        }
        Op::SoftmaxGrad => {
            want(op, inputs, 2)?;
            softmax_grad(op, inputs[0], inputs[1], o)?;
        }
        Op::CrossEntropyGrad => {
            want(op, inputs, 3)?;
            crossentropy_grad(op, inputs[0], inputs[1], inputs[2], o)?;
        }
        Op::Index(i) => {
            want(op, inputs, 1)?;
            let x = inputs[0];
            let len = x.leading().ok_or_else(|| Error::kernel("index", "scalar input"))?;
            let idx = resolve_index(op, *i, len)?;
            x.slice_into(idx, o);
        }
        Op::IncIndex(i) => {
            want(op, inputs, 2)?;
            let (base, v) = (inputs[0], inputs[1]);
            let len = base.leading().ok_or_else(|| Error::kernel("inc_index", "scalar base"))?;
            let idx = resolve_index(op, *i, len)?;
            if v.len() != base.slice_len() {
                return Err(Error::kernel("inc_index", format!("slice shape {:?} vs {:?}", v.shape(), &base.shape()[1..])));
            }
            o.assign(base);
            let n = base.slice_len();
            for (d, s) in o.data_mut()[idx * n..(idx + 1) * n].iter_mut().zip(v.data()) {
                *d += s;
            }
        }
        Op::Stack => {
            if inputs.is_empty() {
                return Err(Error::kernel("stack", "no inputs"));
            }
            let first = inputs[0];
            let mut shape = vec![inputs.len()];
            shape.extend_from_slice(first.shape());
            o.reset(first.dtype(), &shape);
            let n = first.len();
            for (i, t) in inputs.iter().enumerate() {
                if t.shape() != first.shape() {
                    return Err(Error::kernel("stack", format!("input {i} has shape {:?}, expected {:?}", t.shape(), first.shape())));
                }
                o.data_mut()[i * n..(i + 1) * n].copy_from_slice(t.data());
            }
        }
        Op::Concat => {
            want(op, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() == 0 || a.shape()[1..] != b.shape()[1..] {
                return Err(Error::kernel("concat", format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape())));
            }
            let mut shape = a.shape().to_vec();
            shape[0] += b.shape()[0];
            o.reset(a.dtype(), &shape);
            o.data_mut()[..a.len()].copy_from_slice(a.data());
            o.data_mut()[a.len()..].copy_from_slice(b.data());
        }
        Op::SliceLike { start } => {
            if inputs.len() != 2 && inputs.len() != 3 {
                return Err(Error::kernel("slice_like", "expected 2 or 3 inputs"));
            }
            let (x, like) = (inputs[0], inputs[1]);
            let start = start + inputs.get(2).and_then(|t| t.leading()).unwrap_or(0);
            let len = like.leading().ok_or_else(|| Error::kernel("slice_like", "scalar length source"))?;
            let xl = x.leading().ok_or_else(|| Error::kernel("slice_like", "scalar input"))?;
            if start + len > xl {
                return Err(Error::kernel(
                    "slice_like",
                    format!("slice [{start}, {}) exceeds length {xl}", start + len),
                ));
            }
            let n = x.slice_len();
            let mut shape = x.shape().to_vec();
            shape[0] = len;
            o.reset(x.dtype(), &shape);
            o.data_mut().copy_from_slice(&x.data()[start * n..(start + len) * n]);
        }
        Op::IncSlice { start } => {
            if inputs.len() != 2 && inputs.len() != 3 {
                return Err(Error::kernel("inc_slice", "expected 2 or 3 inputs"));
            }
            let (base, v) = (inputs[0], inputs[1]);
            let start = start + inputs.get(2).and_then(|t| t.leading()).unwrap_or(0);
            let bl = base.leading().ok_or_else(|| Error::kernel("inc_slice", "scalar base"))?;
            let vl = v.leading().ok_or_else(|| Error::kernel("inc_slice", "scalar values"))?;
            if start + vl > bl || base.shape()[1..] != v.shape()[1..] {
                return Err(Error::kernel(
                    "inc_slice",
                    format!("cannot add {:?} at {start} into {:?}", v.shape(), base.shape()),
                ));
            }
            o.assign(base);
            let n = base.slice_len();
            for (d, s) in o.data_mut()[start * n..(start + vl) * n].iter_mut().zip(v.data()) {
                *d += s;
            }
        }
        Op::Scan(_) => return Err(Error::kernel("scan", "scan nodes are executed by the loop driver")),
    }
    if o.dtype() != DType::F64 {
        o.round_in_place();
    }
    Ok(())
}

fn resolve_shape(op: &Op, shape: &[i64], total: usize) -> Result<Vec<usize>> {
    let known: usize = shape.iter().filter(|&&s| s >= 0).map(|&s| s as usize).product();
    let mut out = Vec::with_capacity(shape.len());
    for &s in shape {
        if s >= 0 {
            out.push(s as usize);
        } else if known > 0 && total % known == 0 {
            out.push(total / known);
        } else {
            return Err(Error::kernel(&op.name(), format!("cannot reshape {total} elements to {shape:?}")));
        }
    }
    if numel(&out) != total {
        return Err(Error::kernel(&op.name(), format!("cannot reshape {total} elements to {shape:?}")));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Elementwise

const BLOCK: usize = 256;

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

#[derive(Clone, Copy)]
enum Src<'a> {
    Slice(&'a [f64]),
    Scalar(f64),
}

/// How one input maps onto the output index space.
enum Access {
    /// Same shape as the output.
    Direct,
    /// One element.
    Scalar,
    /// Input shape equals a suffix of the output shape.
    Suffix(usize),
    /// General broadcast: per-output-dim strides into the input.
    Strided(Vec<usize>),
}

fn access_for(in_shape: &[usize], out_shape: &[usize]) -> Access {
    let n = numel(in_shape);
    if in_shape == out_shape {
        Access::Direct
    } else if n == 1 {
        Access::Scalar
    } else if in_shape.len() <= out_shape.len() && out_shape.ends_with(in_shape) {
        Access::Suffix(n)
    } else {
        let off = out_shape.len() - in_shape.len();
        let st = strides(in_shape);
        Access::Strided(
            (0..out_shape.len())
                .map(|i| if i < off || in_shape[i - off] == 1 { 0 } else { st[i - off] })
                .collect(),
        )
    }
}

fn elementwise(op: &Op, body: &Composite, inputs: &[&Tensor], o: &mut Tensor) -> Result<()> {
    let mut shape: Vec<usize> = Vec::new();
    let mut dtype = DType::I64;
    for (i, t) in inputs.iter().enumerate() {
        shape = broadcast_shapes(&shape, t.shape()).ok_or_else(|| {
            Error::kernel(&op.name(), format!("input {i}: shape {:?} does not broadcast to {:?}", t.shape(), shape))
        })?;
        dtype = DType::promote(dtype, t.dtype());
    }
    if body.forces_float() {
        dtype = dtype.to_float();
    }
    o.reset(dtype, &shape);
    let total = o.len();
    let access: Vec<Access> = inputs.iter().map(|t| access_for(t.shape(), &shape)).collect();
    let out_strides = strides(&shape);
    let n_regs = body.instrs.len();

    SCRATCH.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (regs, gathered) = &mut *guard;
        regs.resize(n_regs * BLOCK, 0.0);
        gathered.resize(inputs.len() * BLOCK, 0.0);
        let out = o.data_mut();
        let mut start = 0;
        while start < total {
            let len = BLOCK.min(total - start);
            for (i, (t, acc)) in inputs.iter().zip(&access).enumerate() {
                let buf = &mut gathered[i * BLOCK..i * BLOCK + len];
                match acc {
                    Access::Suffix(n) => {
                        let d = t.data();
                        for (k, g) in buf.iter_mut().enumerate() {
                            *g = d[(start + k) % n];
                        }
                    }
                    Access::Strided(st) => {
                        let d = t.data();
                        for (k, g) in buf.iter_mut().enumerate() {
                            let mut rem = start + k;
                            let mut off = 0;
                            for (os, is) in out_strides.iter().zip(st) {
                                off += (rem / os) * is;
                                rem %= os;
                            }
                            *g = d[off];
                        }
                    }
                    Access::Direct | Access::Scalar => {}
                }
            }
            let srcs: Vec<Src> = inputs
                .iter()
                .zip(&access)
                .enumerate()
                .map(|(i, (t, acc))| match acc {
                    Access::Direct => Src::Slice(&t.data()[start..start + len]),
                    Access::Scalar => Src::Scalar(t.data()[0]),
                    _ => Src::Slice(&gathered[i * BLOCK..i * BLOCK + len]),
                })
                .collect();
            for (k, ins) in body.instrs.iter().enumerate() {
                let (done, rest) = regs.split_at_mut(k * BLOCK);
                let dst: &mut [f64] =
                    if k + 1 == n_regs { &mut out[start..start + len] } else { &mut rest[..len] };
                let src = |a: &Operand| -> Src {
                    match *a {
                        Operand::Input(i) => srcs[i],
                        Operand::Reg(r) => Src::Slice(&done[r * BLOCK..r * BLOCK + len]),
                        Operand::Const(bits) => Src::Scalar(f64::from_bits(bits)),
                    }
                };
                if ins.args.len() == 1 {
                    run1(ins.op, src(&ins.args[0]), dst);
                } else {
                    run2(ins.op, src(&ins.args[0]), src(&ins.args[1]), dst);
                }
                if k + 1 == n_regs {
                    break;
                }
            }
            start += len;
        }
    });
    Ok(())
}

#[inline]
fn map1(src: Src, out: &mut [f64], f: impl Fn(f64) -> f64) {
    match src {
        Src::Slice(xs) => {
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = f(x);
            }
        }
        Src::Scalar(x) => out.fill(f(x)),
    }
}

#[inline]
fn map2(a: Src, b: Src, out: &mut [f64], f: impl Fn(f64, f64) -> f64) {
    match (a, b) {
        (Src::Slice(xs), Src::Slice(ys)) => {
            for ((o, &x), &y) in out.iter_mut().zip(xs).zip(ys) {
                *o = f(x, y);
            }
        }
        (Src::Slice(xs), Src::Scalar(y)) => {
            for (o, &x) in out.iter_mut().zip(xs) {
                *o = f(x, y);
            }
        }
        (Src::Scalar(x), Src::Slice(ys)) => {
            for (o, &y) in out.iter_mut().zip(ys) {
                *o = f(x, y);
            }
        }
        (Src::Scalar(x), Src::Scalar(y)) => out.fill(f(x, y)),
    }
}

fn run1(op: ScalarOp, a: Src, out: &mut [f64]) {
    use ScalarOp::*;
    match op {
        Neg => map1(a, out, |x| -x),
        Exp => map1(a, out, f64::exp),
        Log => map1(a, out, f64::ln),
        Log1p => map1(a, out, f64::ln_1p),
        Tanh => map1(a, out, f64::tanh),
        Sqr => map1(a, out, |x| x * x),
        other => map1(a, out, |x| other.apply1(x)),
    }
}

fn run2(op: ScalarOp, a: Src, b: Src, out: &mut [f64]) {
    use ScalarOp::*;
    match op {
        Add => map2(a, b, out, |x, y| x + y),
        Sub => map2(a, b, out, |x, y| x - y),
        Mul => map2(a, b, out, |x, y| x * y),
        Div => map2(a, b, out, |x, y| x / y),
        other => map2(a, b, out, |x, y| other.apply2(x, y)),
    }
}

// ---------------------------------------------------------------------------
// Reductions

/// Splits `shape` around `axis` into (outer, n, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

fn check_axis(op: &Op, x: &Tensor, axis: usize) -> Result<()> {
    if axis >= x.rank() {
        return Err(Error::kernel(&op.name(), format!("axis {axis} out of range for rank {}", x.rank())));
    }
    Ok(())
}

fn reduce(op: &Op, x: &Tensor, axis: Option<usize>, o: &mut Tensor, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<()> {
    match axis {
        None => {
            o.reset(x.dtype(), &[]);
            o.data_mut()[0] = x.data().iter().fold(init, |acc, &v| f(acc, v));
        }
        Some(a) => {
            check_axis(op, x, a)?;
            let (outer, n, inner) = split_axis(x.shape(), a);
            let mut shape = x.shape().to_vec();
            shape.remove(a);
            o.reset(x.dtype(), &shape);
            let d = x.data();
            let out = o.data_mut();
            out.fill(init);
            for p in 0..outer {
                for j in 0..n {
                    let row = &d[(p * n + j) * inner..(p * n + j + 1) * inner];
                    for (acc, &v) in out[p * inner..(p + 1) * inner].iter_mut().zip(row) {
                        *acc = f(*acc, v);
                    }
                }
            }
        }
    }
    Ok(())
}

fn argmax(op: &Op, x: &Tensor, axis: usize, o: &mut Tensor) -> Result<()> {
    check_axis(op, x, axis)?;
    let (outer, n, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    o.reset(DType::I64, &shape);
    let d = x.data();
    let out = o.data_mut();
    for p in 0..outer {
        for i in 0..inner {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for j in 0..n {
                let v = d[(p * n + j) * inner + i];
                if v > best_v || (j == 0) {
                    best = j;
                    best_v = v;
                }
            }
            out[p * inner + i] = best as f64;
        }
    }
    Ok(())
}

fn max_grad(op: &Op, x: &Tensor, g: &Tensor, axis: Option<usize>, o: &mut Tensor) -> Result<()> {
    o.reset(g.dtype().to_float(), x.shape());
    let d = x.data();
    match axis {
        None => {
            let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let gv = g.item().ok_or_else(|| Error::kernel(&op.name(), "expected scalar gradient"))?;
            for (out, &v) in o.data_mut().iter_mut().zip(d) {
                *out = if v == m { gv } else { 0.0 };
            }
        }
        Some(a) => {
            check_axis(op, x, a)?;
            let (outer, n, inner) = split_axis(x.shape(), a);
            if g.len() != outer * inner {
                return Err(Error::kernel(&op.name(), "gradient shape does not match reduction"));
            }
            let out = o.data_mut();
            for p in 0..outer {
                for i in 0..inner {
                    let m = (0..n).map(|j| d[(p * n + j) * inner + i]).fold(f64::NEG_INFINITY, f64::max);
                    let gv = g.data()[p * inner + i];
                    for j in 0..n {
                        let k = (p * n + j) * inner + i;
                        out[k] = if d[k] == m { gv } else { 0.0 };
                    }
                }
            }
        }
    }
    Ok(())
}

fn expand_axis(op: &Op, g: &Tensor, x: &Tensor, axis: Option<usize>, o: &mut Tensor) -> Result<()> {
    o.reset(g.dtype(), x.shape());
    match axis {
        None => {
            let v = g.item().ok_or_else(|| Error::kernel(&op.name(), "expected scalar"))?;
            o.data_mut().fill(v);
        }
        Some(a) => {
            check_axis(op, x, a)?;
            let (outer, n, inner) = split_axis(x.shape(), a);
            if g.len() != outer * inner {
                return Err(Error::kernel(&op.name(), format!("{:?} does not expand to {:?}", g.shape(), x.shape())));
            }
            let gd = g.data();
            let out = o.data_mut();
            for p in 0..outer {
                for j in 0..n {
                    out[(p * n + j) * inner..(p * n + j + 1) * inner].copy_from_slice(&gd[p * inner..(p + 1) * inner]);
                }
            }
        }
    }
    Ok(())
}

fn reduce_like(op: &Op, g: &Tensor, x: &Tensor, o: &mut Tensor) -> Result<()> {
    if g.shape() == x.shape() {
        o.assign(g);
        return Ok(());
    }
    let target = x.shape();
    if broadcast_shapes(target, g.shape()).as_deref() != Some(g.shape()) {
        return Err(Error::kernel(&op.name(), format!("{:?} is not a broadcast of {:?}", g.shape(), target)));
    }
    o.reset(g.dtype(), target);
    o.data_mut().fill(0.0);
    let gshape = g.shape();
    let off = gshape.len() - target.len();
    let tst = strides(target);
    let st: Vec<usize> =
        (0..gshape.len()).map(|i| if i < off || target[i - off] == 1 { 0 } else { tst[i - off] }).collect();
    let gst = strides(gshape);
    let out = o.data_mut();
    for (k, &v) in g.data().iter().enumerate() {
        let mut rem = k;
        let mut idx = 0;
        for (gs, s) in gst.iter().zip(&st) {
            idx += (rem / gs) * s;
            rem %= gs;
        }
        out[idx] += v;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Linear algebra

fn dot(op: &Op, a: &Tensor, b: &Tensor, o: &mut Tensor) -> Result<()> {
    let dtype = DType::promote(a.dtype(), b.dtype());
    let mismatch = |k1: usize, k2: usize| Error::kernel(&op.name(), format!("inner dimension mismatch: {k1} vs {k2}"));
    let (ad, bd) = (a.data(), b.data());
    match (a.shape(), b.shape()) {
        ([k1], [k2]) => {
            if k1 != k2 {
                return Err(mismatch(*k1, *k2));
            }
            o.reset(dtype, &[]);
            let mut s = 0.0;
            for (x, y) in ad.iter().zip(bd) {
                s += x * y;
            }
            o.data_mut()[0] = s;
        }
        ([m, k1], [k2]) => {
            if k1 != k2 {
                return Err(mismatch(*k1, *k2));
            }
            let (m, k) = (*m, *k1);
            o.reset(dtype, &[m]);
            let out = o.data_mut();
            for i in 0..m {
                let row = &ad[i * k..(i + 1) * k];
                let mut s = 0.0;
                for (x, y) in row.iter().zip(bd) {
                    s += x * y;
                }
                out[i] = s;
            }
        }
        ([k1], [k2, n]) => {
            if k1 != k2 {
                return Err(mismatch(*k1, *k2));
            }
            let n = *n;
            o.reset(dtype, &[n]);
            let out = o.data_mut();
            out.fill(0.0);
            for (kk, &x) in ad.iter().enumerate() {
                let row = &bd[kk * n..(kk + 1) * n];
                for (acc, &y) in out.iter_mut().zip(row) {
                    *acc += x * y;
                }
            }
        }
        ([m, k1], [k2, n]) => {
            if k1 != k2 {
                return Err(mismatch(*k1, *k2));
            }
            let (m, k, n) = (*m, *k1, *n);
            o.reset(dtype, &[m, n]);
            let out = o.data_mut();
            out.fill(0.0);
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for kk in 0..k {
                    let x = ad[i * k + kk];
                    let row = &bd[kk * n..(kk + 1) * n];
                    for (acc, &y) in orow.iter_mut().zip(row) {
                        *acc += x * y;
                    }
                }
            }
        }
        (sa, sb) => {
            return Err(Error::kernel(&op.name(), format!("unsupported shapes {sa:?} and {sb:?}")));
        }
    }
    Ok(())
}

fn transpose(x: &Tensor, o: &mut Tensor) {
    let shape: Vec<usize> = x.shape().iter().rev().copied().collect();
    o.reset(x.dtype(), &shape);
    if x.rank() < 2 {
        o.data_mut().copy_from_slice(x.data());
        return;
    }
    if x.rank() == 2 {
        let (r, c) = (x.shape()[0], x.shape()[1]);
        let d = x.data();
        let out = o.data_mut();
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        return;
    }
    let in_st = strides(x.shape());
    let out_st = strides(&shape);
    let rank = shape.len();
    let d = x.data();
    let out = o.data_mut();
    for (k, slot) in out.iter_mut().enumerate() {
        let mut rem = k;
        let mut src = 0;
        for i in 0..rank {
            let idx = rem / out_st[i];
            rem %= out_st[i];
            src += idx * in_st[rank - 1 - i];
        }
        *slot = d[src];
    }
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy

fn rows_of(op: &Op, x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [n] => Ok((1, *n)),
        [r, c] => Ok((*r, *c)),
        s => Err(Error::kernel(&op.name(), format!("expected vector or matrix, got {s:?}"))),
    }
}

fn softmax(op: &Op, x: &Tensor, o: &mut Tensor) -> Result<()> {
    want_float(op, x, 0)?;
    let (r, c) = rows_of(op, x)?;
    o.reset(x.dtype(), x.shape());
    let d = x.data();
    let out = o.data_mut();
    for i in 0..r {
        let row = &d[i * c..(i + 1) * c];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let orow = &mut out[i * c..(i + 1) * c];
        let mut s = 0.0;
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in orow.iter_mut() {
            *o /= s;
        }
    }
    Ok(())
}

fn softmax_grad(op: &Op, sm: &Tensor, g: &Tensor, o: &mut Tensor) -> Result<()> {
    let (r, c) = rows_of(op, sm)?;
    if g.shape() != sm.shape() {
        return Err(Error::kernel(&op.name(), "gradient shape mismatch"));
    }
    o.reset(sm.dtype(), sm.shape());
    let (s, gd) = (sm.data(), g.data());
    let out = o.data_mut();
    for i in 0..r {
        let range = i * c..(i + 1) * c;
        let dotp: f64 = s[range.clone()].iter().zip(&gd[range.clone()]).map(|(a, b)| a * b).sum();
        for k in range {
            out[k] = s[k] * (gd[k] - dotp);
        }
    }
    Ok(())
}

fn target_of(op: &Op, t: f64, classes: usize) -> Result<usize> {
    if t < 0.0 || t as usize >= classes || t.fract() != 0.0 {
        return Err(Error::kernel(&op.name(), format!("target {t} out of range for {classes} classes")));
    }
    Ok(t as usize)
}

fn crossentropy(op: &Op, p: &Tensor, t: &Tensor, o: &mut Tensor) -> Result<()> {
    if t.dtype() != DType::I64 {
        return Err(Error::kernel(&op.name(), format!("input 1: unexpected dtype {}", t.dtype())));
    }
    let (r, c) = rows_of(op, p)?;
    if t.len() != r {
        return Err(Error::kernel(&op.name(), format!("{} targets for {r} rows", t.len())));
    }
    let shape: Vec<usize> = if p.rank() == 1 { vec![] } else { vec![r] };
    o.reset(p.dtype().to_float(), &shape);
    let out = o.data_mut();
    for i in 0..r {
        let k = target_of(op, t.data()[i], c)?;
        out[i] = -p.data()[i * c + k].ln();
    }
    Ok(())
}

fn crossentropy_grad(op: &Op, p: &Tensor, t: &Tensor, g: &Tensor, o: &mut Tensor) -> Result<()> {
    let (r, c) = rows_of(op, p)?;
    if t.len() != r || g.len() != r {
        return Err(Error::kernel(&op.name(), "row count mismatch"));
    }
    o.reset(p.dtype(), p.shape());
    let out = o.data_mut();
    out.fill(0.0);
    for i in 0..r {
        let k = target_of(op, t.data()[i], c)?;
        out[i * c + k] = -g.data()[i] / p.data()[i * c + k];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(op: Op, inputs: &[&Tensor]) -> Tensor {
        eval_kernel(&op, inputs).unwrap().pop().unwrap()
    }

    #[test]
    fn elementwise_basics() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let b = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(run(Op::Elemwise(ScalarOp::Add), &[&a, &b]).data(), &[4.0, 6.0]);
        assert_eq!(run(Op::Elemwise(ScalarOp::Sigmoid), &[&Tensor::scalar(0.0)]).data(), &[0.5]);
        assert_eq!(run(Op::Elemwise(ScalarOp::Log1p), &[&Tensor::scalar(0.0)]).data(), &[0.0]);
    }

    #[test]
    fn broadcasting_bias() {
        let m = Tensor::matrix(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let b = Tensor::vector(vec![10.0, 20.0, 30.0]);
        let col = Tensor::matrix(2, 1, vec![100.0, 200.0]).unwrap();
        let r = run(Op::Elemwise(ScalarOp::Add), &[&m, &b]);
        assert_eq!(r.data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        let r = run(Op::Elemwise(ScalarOp::Add), &[&m, &col]);
        assert_eq!(r.data(), &[100.0, 101.0, 102.0, 203.0, 204.0, 205.0]);
    }

    #[test]
    fn long_vectors_cross_blocks() {
        let n = 3 * BLOCK + 7;
        let a = Tensor::vector((0..n).map(|i| i as f64).collect());
        let r = run(Op::Elemwise(ScalarOp::Sqr), &[&a]);
        assert!(r.data().iter().enumerate().all(|(i, &v)| v == (i * i) as f64));
    }

    #[test]
    fn dot_matrix_vector() {
        let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let v = Tensor::vector(vec![1.0, 1.0]);
        assert_eq!(run(Op::Dot, &[&m, &v]).data(), &[3.0, 7.0]);
        assert_eq!(run(Op::Dot, &[&v, &m]).data(), &[4.0, 6.0]);
        assert_eq!(run(Op::Dot, &[&m, &m]).data(), &[7.0, 10.0, 15.0, 22.0]);
        assert_eq!(run(Op::Dot, &[&v, &v]).data(), &[2.0]);
    }

    #[test]
    fn dot_runtime_mismatch() {
        let m = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let v = Tensor::vector(vec![1.0, 1.0]);
        assert!(eval_kernel(&Op::Dot, &[&m, &v]).is_err());
    }

    #[test]
    fn softmax_uniform_and_rows() {
        let s = run(Op::Softmax, &[&Tensor::vector(vec![0.0, 0.0, 0.0])]);
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-16);
        }
        let m = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 700.0]).unwrap();
        let s = run(Op::Softmax, &[&m]);
        for r in 0..2 {
            let sum: f64 = s.data()[r * 3..r * 3 + 3].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn crossentropy_matches_scalar_formula() {
        let p = Tensor::matrix(2, 2, vec![0.25, 0.75, 0.6, 0.4]).unwrap();
        let t = Tensor::from_i64(vec![2], vec![1, 0]).unwrap();
        let r = run(Op::CrossEntropy, &[&p, &t]);
        assert_eq!(r.data(), &[-(0.75f64).ln(), -(0.6f64).ln()]);
        let bad = Tensor::from_i64(vec![2], vec![1, 2]).unwrap();
        assert!(eval_kernel(&Op::CrossEntropy, &[&p, &bad]).is_err());
        let ft = Tensor::vector(vec![1.0, 0.0]);
        assert!(eval_kernel(&Op::CrossEntropy, &[&p, &ft]).is_err());
    }

    #[test]
    fn reductions() {
        let m = Tensor::matrix(2, 3, vec![1.0, 5.0, 3.0, 4.0, 2.0, 6.0]).unwrap();
        assert_eq!(run(Op::Sum { axis: Some(0) }, &[&m]).data(), &[5.0, 7.0, 9.0]);
        assert_eq!(run(Op::Sum { axis: Some(1) }, &[&m]).data(), &[9.0, 12.0]);
        assert_eq!(run(Op::Sum { axis: None }, &[&m]).data(), &[21.0]);
        assert_eq!(run(Op::Max { axis: Some(1) }, &[&m]).data(), &[5.0, 6.0]);
        let am = run(Op::ArgMax { axis: 1 }, &[&m]);
        assert_eq!(am.dtype(), DType::I64);
        assert_eq!(am.data(), &[1.0, 2.0]);
    }

    #[test]
    fn reduce_like_sums_broadcast_dims() {
        let g = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::vector(vec![0.0; 3]);
        assert_eq!(run(Op::ReduceLike, &[&g, &b]).data(), &[5.0, 7.0, 9.0]);
        let col = Tensor::matrix(2, 1, vec![0.0; 2]).unwrap();
        assert_eq!(run(Op::ReduceLike, &[&g, &col]).data(), &[6.0, 15.0]);
        assert_eq!(run(Op::ReduceLike, &[&g, &Tensor::scalar(0.0)]).data(), &[21.0]);
    }

    #[test]
    fn transpose_general() {
        let m = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = run(Op::Transpose, &[&m]);
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        let c = Tensor::from_vec(vec![2, 1, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let t = run(Op::Transpose, &[&c]);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
    }

    #[test]
    fn slicing_ops() {
        let x = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(run(Op::Index(-1), &[&x]).data(), &[5.0, 6.0]);
        assert!(eval_kernel(&Op::Index(3), &[&x]).is_err());
        let like = Tensor::zeros(DType::F64, &[2]);
        assert_eq!(run(Op::SliceLike { start: 1 }, &[&x, &like]).data(), &[3.0, 4.0, 5.0, 6.0]);
        let v = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(run(Op::IncSlice { start: 2 }, &[&x, &v]).data(), &[1.0, 2.0, 3.0, 4.0, 6.0, 7.0]);
        let st = run(Op::Stack, &[&Tensor::vector(vec![1.0]), &Tensor::vector(vec![2.0])]);
        assert_eq!(st.shape(), &[2, 1]);
        let c = run(Op::Concat, &[&x, &v]);
        assert_eq!(c.shape(), &[4, 2]);
    }

    #[test]
    fn reshape_infers() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        let r = run(Op::Reshape(vec![-1, 1]), &[&x]);
        assert_eq!(r.shape(), &[4, 1]);
        assert!(eval_kernel(&Op::Reshape(vec![3, -1]), &[&x]).is_err());
    }
}
