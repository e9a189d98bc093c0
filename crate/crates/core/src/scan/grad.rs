//! Backpropagation through a scan, as a second scan running backwards.
//!
//! The backward loop reads, at each step, the forward step's inputs (sequence
//! slices and the state history) together with the incoming gradients. It
//! carries one accumulator per state tap depth, holding the gradient already
//! collected for the states that later steps read, plus one accumulator per
//! differentiable non-sequence.

use std::sync::Arc;

use super::{clone_inner, Buffer, Scan, StepCount, Steps};
use crate::autodiff::lop;
use crate::builder as b;
use crate::error::{Error, Result};
use crate::graph::{apply1, ApplyNode, Var};
use crate::ops::Op;

fn is_float(v: &Var) -> bool {
    v.ty().dtype.is_float()
}

/// Gradient rule of a scan node.
pub fn scan_grad(node: &Arc<ApplyNode>, output_grads: &[Option<Var>]) -> Result<Vec<Option<Var>>> {
    let Op::Scan(scan) = &node.op else { unreachable!() };
    let n_in = node.inputs.len();
    if output_grads.iter().all(Option::is_none) {
        return Ok(vec![None; n_in]);
    }
    if scan.has_until {
        return Err(Error::Scan("gradients through scans with a stop condition are not supported".into()));
    }
    if scan.go_backwards {
        return Err(Error::Scan("gradients through backward scans are not supported".into()));
    }
    if scan.buffers.iter().any(|b| *b != Buffer::Full) {
        return Err(Error::Scan("gradients need the full state history".into()));
    }
    let ns = scan.n_states();
    let outs = node.outputs();
    let like = outs[0].clone();

    let seq_vars: Vec<&Var> = (0..scan.n_seqs()).map(|i| &node.inputs[scan.outer_seq(i)]).collect();
    let inits: Vec<&Var> = (0..ns).map(|j| &node.inputs[scan.outer_init(j)]).collect();
    let nonseqs: Vec<&Var> = (0..scan.n_nonseq).map(|k| &node.inputs[scan.outer_nonseq(k)]).collect();
    let float_state: Vec<bool> = (0..ns).map(|j| scan.state_type(j).dtype.is_float()).collect();
    let float_extra: Vec<bool> =
        (0..scan.n_extra).map(|l| output_grads[ns + l].is_some() && is_float(&outs[ns + l])).collect();

    // Outer sequences of the backward loop, in inner-input order of the
    // forward body, then the incoming gradients.
    let mut bseqs: Vec<Var> = Vec::new();
    for (i, x) in seq_vars.iter().enumerate() {
        let min = scan.seq_min(i);
        for &o in &scan.seq_taps[i] {
            bseqs.push(b::slice_like(x, &like, (o - min) as usize)?);
        }
    }
    for j in 0..ns {
        let m = scan.state_depth(j);
        let stacked = if scan.plain_init(j) { b::stack(&[inits[j].clone()])? } else { inits[j].clone() };
        let hist = b::concat(&stacked, &outs[j])?;
        for &tap in &scan.state_taps[j] {
            let k = tap.unsigned_abs() as usize;
            bseqs.push(b::slice_like(&hist, &like, m - k)?);
        }
    }
    let n_fwd_seqs = bseqs.len();
    let mut g_pos: Vec<Option<usize>> = vec![None; ns];
    for j in 0..ns {
        if let (true, Some(g)) = (float_state[j], &output_grads[j]) {
            g_pos[j] = Some(bseqs.len());
            bseqs.push(g.clone());
        }
    }
    let mut ge_pos: Vec<Option<usize>> = vec![None; scan.n_extra];
    for l in 0..scan.n_extra {
        if float_extra[l] {
            ge_pos[l] = Some(bseqs.len());
            bseqs.push(output_grads[ns + l].clone().unwrap());
        }
    }

    // Carried states: per float state, depth-many tap accumulators; then one
    // accumulator per float non-sequence.
    let mut builder = Scan::new().go_backwards(true);
    builder = match scan.steps {
        Steps::Fixed(n) => builder.fixed_steps(n),
        _ => builder.steps(StepCount::FromSequences),
    };
    for s in &bseqs {
        builder = builder.sequence(s);
    }
    let mut carry_pos: Vec<Option<usize>> = vec![None; ns];
    let mut n_carry = 0;
    for j in 0..ns {
        if float_state[j] {
            let z = b::zeros_like(&b::index(&outs[j], 0)?)?;
            carry_pos[j] = Some(n_carry);
            for _ in 0..scan.state_depth(j) {
                builder = builder.state(&z);
                n_carry += 1;
            }
        }
    }
    let mut acc_pos: Vec<Option<usize>> = vec![None; scan.n_nonseq];
    let mut n_acc = 0;
    for (k, v) in nonseqs.iter().enumerate() {
        if is_float(v) {
            acc_pos[k] = Some(n_carry + n_acc);
            builder = builder.state(&b::zeros_of(v)?);
            n_acc += 1;
        }
    }
    for v in &nonseqs {
        builder = builder.nonsequence(v);
    }
    let float_seq: Vec<bool> = seq_vars.iter().map(|x| is_float(x)).collect();

    let result = builder.build(|body| {
        let mut inner_in: Vec<Var> = (0..n_fwd_seqs).map(|i| body.seq(i).clone()).collect();
        inner_in.extend((0..scan.n_nonseq).map(|k| body.nonseq(k).clone()));
        let fwd = clone_inner(&scan.inner, &inner_in)?;

        let mut f = Vec::new();
        let mut eta = Vec::new();
        for j in 0..ns {
            if let Some(c) = carry_pos[j] {
                let carried = body.state(c).clone();
                let gbar = match g_pos[j] {
                    Some(p) => b::add(body.seq(p), &carried)?,
                    None => carried,
                };
                f.push(fwd[j].clone());
                eta.push(gbar);
            }
        }
        for l in 0..scan.n_extra {
            if let Some(p) = ge_pos[l] {
                f.push(fwd[ns + l].clone());
                eta.push(body.seq(p).clone());
            }
        }

        // Differentiate with respect to every float inner input.
        let mut wrt = Vec::new();
        let mut seq_slot = Vec::new();
        for i in 0..scan.n_seqs() {
            for t in 0..scan.seq_taps[i].len() {
                let idx = scan.seq_input(i, t);
                seq_slot.push(float_seq[i].then(|| wrt.len()));
                if float_seq[i] {
                    wrt.push(inner_in[idx].clone());
                }
            }
        }
        let mut state_slot: Vec<Vec<usize>> = vec![Vec::new(); ns];
        for j in 0..ns {
            if float_state[j] {
                for t in 0..scan.state_taps[j].len() {
                    state_slot[j].push(wrt.len());
                    wrt.push(inner_in[scan.state_input(j, t)].clone());
                }
            }
        }
        let mut nonseq_slot = vec![None; scan.n_nonseq];
        for k in 0..scan.n_nonseq {
            if acc_pos[k].is_some() {
                nonseq_slot[k] = Some(wrt.len());
                wrt.push(inner_in[scan.nonseq_input(k)].clone());
            }
        }
        let d = lop(&f, &wrt, &eta)?;

        let mut next = Vec::new();
        for j in 0..ns {
            let Some(c) = carry_pos[j] else { continue };
            let m = scan.state_depth(j);
            for k in 1..=m {
                let dk = scan.state_taps[j].iter().position(|&tap| tap == -(k as i64)).map(|t| &d[state_slot[j][t]]);
                let v = match (k < m, dk) {
                    (true, Some(dk)) => b::add(body.state(c + k), dk)?,
                    (true, None) => body.state(c + k).clone(),
                    (false, Some(dk)) => dk.clone(),
                    (false, None) => b::zeros_like(body.state(c))?,
                };
                next.push(v);
            }
        }
        for k in 0..scan.n_nonseq {
            if let (Some(a), Some(s)) = (acc_pos[k], nonseq_slot[k]) {
                next.push(b::add(body.state(a), &d[s])?);
            }
        }
        let extra: Vec<Var> = seq_slot.iter().flatten().map(|&s| d[s].clone()).collect();
        Ok(super::Step::from(next).with_extra(extra))
    })?;

    let mut grads: Vec<Option<Var>> = vec![None; n_in];
    let mut e = 0;
    for (i, x) in seq_vars.iter().enumerate() {
        if !float_seq[i] {
            continue;
        }
        let min = scan.seq_min(i);
        let mut acc = b::zeros_like(x)?;
        for &o in &scan.seq_taps[i] {
            acc = b::inc_slice(&acc, &result.extras[e], (o - min) as usize)?;
            e += 1;
        }
        grads[scan.outer_seq(i)] = Some(acc);
    }
    for j in 0..ns {
        let Some(c) = carry_pos[j] else { continue };
        let last = |k: usize| b::index(&result.states[c + k - 1], 0);
        let g = if scan.plain_init(j) {
            last(1)?
        } else {
            let m = scan.state_depth(j);
            let parts: Vec<Var> = (0..m).map(|p| last(m - p)).collect::<Result<_>>()?;
            b::stack(&parts)?
        };
        grads[scan.outer_init(j)] = Some(g);
    }
    for k in 0..scan.n_nonseq {
        if let Some(a) = acc_pos[k] {
            grads[scan.outer_nonseq(k)] = Some(apply1(Op::Index(0), &[result.states[a].clone()])?);
        }
    }
    Ok(grads)
}

