//! Forward-mode perturbation of a scan.
//!
//! The result is a new loop that recomputes the original states alongside
//! their perturbations. Merging it with the original loop afterwards removes
//! the duplicated work.

use std::sync::Arc;

use super::{clone_inner, Buffer, Scan, StepCount, Steps};
use crate::autodiff::rop;
use crate::builder as b;
use crate::error::{Error, Result};
use crate::graph::{ApplyNode, Var};
use crate::ops::Op;

/// R-op rule of a scan node.
pub fn scan_rop(node: &Arc<ApplyNode>, perts: &[Option<Var>]) -> Result<Vec<Option<Var>>> {
    let Op::Scan(scan) = &node.op else { unreachable!() };
    let n_out = node.n_outputs();
    if perts.iter().all(Option::is_none) {
        return Ok(vec![None; n_out]);
    }
    if scan.buffers.iter().any(|b| *b != Buffer::Full) {
        return Err(Error::Scan("perturbing a scan needs the full state history".into()));
    }
    let ns = scan.n_states();
    let input = |i: usize| node.inputs[i].clone();
    let pert = |i: usize| perts[i].clone().filter(|_| node.inputs[i].ty().dtype.is_float());

    let mut builder = Scan::new().go_backwards(scan.go_backwards);
    builder = match scan.steps {
        Steps::Fixed(n) => builder.fixed_steps(n),
        Steps::Symbolic => builder.n_steps(&node.inputs[0]),
        Steps::FromSequences => builder.steps(StepCount::FromSequences),
    };
    for i in 0..scan.n_seqs() {
        builder = builder.sequence_taps(&input(scan.outer_seq(i)), &scan.seq_taps[i]);
    }
    let pert_seqs: Vec<usize> = (0..scan.n_seqs()).filter(|&i| pert(scan.outer_seq(i)).is_some()).collect();
    for &i in &pert_seqs {
        builder = builder.sequence_taps(&pert(scan.outer_seq(i)).unwrap(), &scan.seq_taps[i]);
    }
    for j in 0..ns {
        builder = builder.state_taps(&input(scan.outer_init(j)), &scan.state_taps[j]);
    }
    let pert_states: Vec<usize> = (0..ns).filter(|&j| scan.state_type(j).dtype.is_float()).collect();
    for &j in &pert_states {
        let init = input(scan.outer_init(j));
        let p = match pert(scan.outer_init(j)) {
            Some(p) => p,
            None => b::zeros_of(&init)?,
        };
        builder = builder.state_taps(&p, &scan.state_taps[j]);
    }
    for k in 0..scan.n_nonseq {
        builder = builder.nonsequence(&input(scan.outer_nonseq(k)));
    }
    let pert_nonseqs: Vec<usize> = (0..scan.n_nonseq).filter(|&k| pert(scan.outer_nonseq(k)).is_some()).collect();
    for &k in &pert_nonseqs {
        builder = builder.nonsequence(&pert(scan.outer_nonseq(k)).unwrap());
    }
    let pert_extras: Vec<usize> =
        (0..scan.n_extra).filter(|&l| scan.inner.outputs[ns + l].ty().dtype.is_float()).collect();

    let result = builder.build(|body| {
        // Original inner inputs, in the forward body's order.
        let mut inner_in = Vec::with_capacity(scan.inner.inputs.len());
        for i in 0..scan.n_seqs() {
            for t in 0..scan.seq_taps[i].len() {
                inner_in.push(body.seq_tap(i, t).clone());
            }
        }
        for j in 0..ns {
            for t in 0..scan.state_taps[j].len() {
                inner_in.push(body.state_tap(j, t).clone());
            }
        }
        for k in 0..scan.n_nonseq {
            inner_in.push(body.nonseq(k).clone());
        }
        let fwd = clone_inner(&scan.inner, &inner_in)?;

        let mut wrt = Vec::new();
        let mut gamma = Vec::new();
        for (p, &i) in pert_seqs.iter().enumerate() {
            for t in 0..scan.seq_taps[i].len() {
                wrt.push(body.seq_tap(i, t).clone());
                gamma.push(body.seq_tap(scan.n_seqs() + p, t).clone());
            }
        }
        for (p, &j) in pert_states.iter().enumerate() {
            for t in 0..scan.state_taps[j].len() {
                wrt.push(body.state_tap(j, t).clone());
                gamma.push(body.state_tap(ns + p, t).clone());
            }
        }
        for (p, &k) in pert_nonseqs.iter().enumerate() {
            wrt.push(body.nonseq(k).clone());
            gamma.push(body.nonseq(scan.n_nonseq + p).clone());
        }

        let mut f: Vec<Var> = pert_states.iter().map(|&j| fwd[j].clone()).collect();
        f.extend(pert_extras.iter().map(|&l| fwd[ns + l].clone()));
        let df = rop(&f, &wrt, &gamma)?;

        let mut next: Vec<Var> = fwd[..ns].to_vec();
        next.extend(df[..pert_states.len()].iter().cloned());
        let mut step = super::Step::from(next).with_extra(df[pert_states.len()..].to_vec());
        if scan.has_until {
            step = step.until(fwd[ns + scan.n_extra].clone());
        }
        Ok(step)
    })?;

    let mut out = vec![None; n_out];
    for (p, &j) in pert_states.iter().enumerate() {
        out[j] = Some(result.states[ns + p].clone());
    }
    for (p, &l) in pert_extras.iter().enumerate() {
        out[ns + l] = Some(result.extras[p].clone());
    }
    Ok(out)
}
