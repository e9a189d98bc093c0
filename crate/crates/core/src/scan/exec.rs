//! Loop driver: slicing, state bookkeeping and output assembly happen here,
//! outside the inner graph.

use std::collections::VecDeque;

use super::{Buffer, ScanOp, Steps};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vm::{Env, Machine, RunMode};

fn scan_err<T>(msg: String) -> Result<T> {
    Err(Error::Scan(msg))
}

/// Number of iterations to run (before any stop condition).
fn step_count(scan: &ScanOp, inputs: &[&Tensor]) -> Result<usize> {
    let seqs = &inputs[scan.steps_offset()..scan.steps_offset() + scan.n_seqs()];
    let t = match scan.steps {
        Steps::Fixed(n) => n,
        Steps::Symbolic => {
            let v = inputs[0].item().ok_or_else(|| Error::Scan("step count must be a scalar".into()))?;
            if v < 1.0 {
                return scan_err(format!("n_steps must be at least 1, got {v}"));
            }
            v as usize
        }
        Steps::FromSequences => {
            let mut t = usize::MAX;
            for (i, s) in seqs.iter().enumerate() {
                let len = s.leading().unwrap_or(0);
                let span = scan.seq_span(i);
                if len <= span {
                    return scan_err(format!("sequence {i} has length {len}, its taps need more than {span}"));
                }
                t = t.min(len - span);
            }
            t
        }
    };
    if t == 0 {
        return scan_err("n_steps must be at least 1".into());
    }
    for (i, s) in seqs.iter().enumerate() {
        let len = s.leading().ok_or_else(|| Error::Scan(format!("sequence {i} is a scalar")))?;
        if len < t + scan.seq_span(i) {
            return scan_err(format!(
                "sequence {i} has length {len}, shorter than the {} required",
                t + scan.seq_span(i)
            ));
        }
    }
    Ok(t)
}

/// Evaluates a scan node on concrete outer inputs.
pub fn eval_scan(scan: &ScanOp, inputs: &[&Tensor]) -> Result<Vec<Tensor>> {
    if inputs.len() != scan.n_outer_inputs() {
        return scan_err(format!("expected {} inputs, got {}", scan.n_outer_inputs(), inputs.len()));
    }
    let max_t = step_count(scan, inputs)?;
    let prog = scan.program()?;
    let mut machine = Machine::new(&prog);
    let mode = RunMode { lazy: true, gc: false, timing: false };

    let seqs: Vec<&Tensor> = (0..scan.n_seqs()).map(|i| inputs[scan.outer_seq(i)]).collect();
    let nonseqs: Vec<&Tensor> = (0..scan.n_nonseq).map(|k| inputs[scan.outer_nonseq(k)]).collect();

    // Most recent values of each state, oldest first; always holds at
    // least `max |tap|` entries, or the rotating depth when larger.
    let mut recent: Vec<VecDeque<Tensor>> = Vec::with_capacity(scan.n_states());
    let mut keep: Vec<usize> = Vec::with_capacity(scan.n_states());
    for j in 0..scan.n_states() {
        let init = inputs[scan.outer_init(j)];
        let m = scan.state_depth(j);
        let mut q = VecDeque::with_capacity(m + 1);
        if scan.plain_init(j) {
            q.push_back(init.clone());
        } else {
            if init.leading() != Some(m) {
                return scan_err(format!("state {j}: initial value must stack {m} values, shape is {:?}", init.shape()));
            }
            for k in 0..m {
                q.push_back(init.slice(k));
            }
        }
        keep.push(match scan.buffers[j] {
            Buffer::Full => m,
            Buffer::Rotating(d) => m.max(d),
        });
        recent.push(q);
    }

    let mut seq_slices: Vec<Tensor> = vec![Tensor::default(); scan.n_seq_inputs()];
    let mut state_out: Vec<Option<Tensor>> = vec![None; scan.n_states()];
    let mut extra_out: Vec<Option<Tensor>> = vec![None; scan.n_extra];
    let mut done = 0;
    for t in 0..max_t {
        let tau = if scan.go_backwards { max_t - 1 - t } else { t };
        for i in 0..scan.n_seqs() {
            let min = scan.seq_min(i);
            for (k, &o) in scan.seq_taps[i].iter().enumerate() {
                let pos = (tau as i64 + o - min) as usize;
                seqs[i].slice_into(pos, &mut seq_slices[scan.seq_input(i, k)]);
            }
        }
        let mut ins: Vec<&Tensor> = seq_slices.iter().collect();
        for j in 0..scan.n_states() {
            let q = &recent[j];
            for &tap in &scan.state_taps[j] {
                ins.push(&q[q.len() - tap.unsigned_abs() as usize]);
            }
        }
        ins.extend(nonseqs.iter().copied());
        let env = Env { inputs: &ins, shared: &[] };
        machine.run(&prog, &env, mode)?;

        let mut stop = false;
        let mut new_states = Vec::with_capacity(scan.n_states());
        for j in 0..scan.n_states() {
            let v = machine.output(&prog, &env, j);
            let want = recent[j].back().unwrap().shape();
            if v.shape() != want {
                return scan_err(format!("state {j}: step {t} produced shape {:?}, expected {:?}", v.shape(), want));
            }
            if scan.buffers[j] == Buffer::Full {
                let buf = state_out[j].get_or_insert_with(|| {
                    let mut shape = vec![max_t];
                    shape.extend_from_slice(v.shape());
                    Tensor::zeros(v.dtype(), &shape)
                });
                buf.set_slice(tau, v);
            }
            new_states.push(v.clone());
        }
        for l in 0..scan.n_extra {
            let v = machine.output(&prog, &env, scan.n_states() + l);
            let buf = extra_out[l].get_or_insert_with(|| {
                let mut shape = vec![max_t];
                shape.extend_from_slice(v.shape());
                Tensor::zeros(v.dtype(), &shape)
            });
            if buf.shape()[1..] != *v.shape() {
                return scan_err(format!("extra output {l}: step {t} produced shape {:?}", v.shape()));
            }
            buf.set_slice(tau, v);
        }
        if scan.has_until {
            let c = machine.output(&prog, &env, scan.n_states() + scan.n_extra);
            stop = c.item().ok_or_else(|| Error::Scan("until condition must be a scalar".into()))? != 0.0;
        }
        for (j, v) in new_states.into_iter().enumerate() {
            recent[j].push_back(v);
            if recent[j].len() > keep[j] {
                recent[j].pop_front();
            }
        }
        done = t + 1;
        if stop {
            break;
        }
    }

    let truncate = |buf: Tensor| -> Result<Tensor> {
        if done == max_t {
            return Ok(buf);
        }
        let dtype = buf.dtype();
        let mut shape = buf.shape().to_vec();
        let n = buf.slice_len();
        shape[0] = done;
        let mut data = buf.into_data();
        data.truncate(done * n);
        Tensor::new(dtype, shape, data)
    };

    let mut outs = Vec::with_capacity(scan.n_states() + scan.n_extra);
    for j in 0..scan.n_states() {
        match scan.buffers[j] {
            Buffer::Full => {
                outs.push(truncate(state_out[j].take().unwrap())?);
            }
            Buffer::Rotating(d) => {
                let q = &recent[j];
                let newest: Vec<&Tensor> = q.iter().rev().take(d).collect();
                let first = newest[0];
                let mut shape = vec![newest.len()];
                shape.extend_from_slice(first.shape());
                let mut buf = Tensor::zeros(first.dtype(), &shape);
                for (k, v) in newest.iter().enumerate() {
                    // Backward scans keep the newest value at index 0.
                    let pos = if scan.go_backwards { k } else { newest.len() - 1 - k };
                    buf.set_slice(pos, v);
                }
                outs.push(buf);
            }
        }
    }
    for buf in extra_out {
        outs.push(truncate(buf.unwrap())?);
    }
    Ok(outs)
}
