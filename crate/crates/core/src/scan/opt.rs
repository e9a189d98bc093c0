//! Loop optimizations: single-step unrolling, hoisting of loop-invariant and
//! per-element work, merging of loops over the same iteration space, and
//! optimization of loop bodies.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use super::{clone_inner, Buffer, ScanOp, Steps};
use crate::builder as b;
use crate::error::Result;
use crate::graph::{apply, mapped, reachable_nodes, reapply, rebuild, toposort_vars, ApplyNode, Graph, Var, VarId, VarKind};
use crate::ops::Op;
use crate::rewrite::{cse, optimize_with, Config};
use crate::types::Dim;

#[derive(Debug, Clone)]
struct SeqPart {
    outer: Var,
    taps: Vec<i64>,
    ph: Vec<Var>,
}

#[derive(Debug, Clone)]
struct StatePart {
    init: Var,
    taps: Vec<i64>,
    ph: Vec<Var>,
    next: Var,
    buffer: Buffer,
}

#[derive(Debug, Clone)]
struct NonseqPart {
    outer: Var,
    ph: Var,
}

/// A scan node taken apart into editable pieces. Inner placeholders and
/// inner expressions are shared with the original node until edited.
#[derive(Debug, Clone)]
struct Parts {
    steps: Steps,
    steps_var: Option<Var>,
    go_backwards: bool,
    seqs: Vec<SeqPart>,
    states: Vec<StatePart>,
    nonseqs: Vec<NonseqPart>,
    extras: Vec<Var>,
    until: Option<Var>,
}

fn decompose(node: &Arc<ApplyNode>) -> Parts {
    let Op::Scan(scan) = &node.op else { unreachable!() };
    let inner = &scan.inner;
    let ns = scan.n_states();
    Parts {
        steps: scan.steps,
        steps_var: (scan.steps == Steps::Symbolic).then(|| node.inputs[0].clone()),
        go_backwards: scan.go_backwards,
        seqs: (0..scan.n_seqs())
            .map(|i| SeqPart {
                outer: node.inputs[scan.outer_seq(i)].clone(),
                taps: scan.seq_taps[i].clone(),
                ph: (0..scan.seq_taps[i].len()).map(|t| inner.inputs[scan.seq_input(i, t)].clone()).collect(),
            })
            .collect(),
        states: (0..ns)
            .map(|j| StatePart {
                init: node.inputs[scan.outer_init(j)].clone(),
                taps: scan.state_taps[j].clone(),
                ph: (0..scan.state_taps[j].len()).map(|t| inner.inputs[scan.state_input(j, t)].clone()).collect(),
                next: inner.outputs[j].clone(),
                buffer: scan.buffers[j],
            })
            .collect(),
        nonseqs: (0..scan.n_nonseq)
            .map(|k| NonseqPart {
                outer: node.inputs[scan.outer_nonseq(k)].clone(),
                ph: inner.inputs[scan.nonseq_input(k)].clone(),
            })
            .collect(),
        extras: inner.outputs[ns..ns + scan.n_extra].to_vec(),
        until: scan.has_until.then(|| inner.outputs[ns + scan.n_extra].clone()),
    }
}

impl Parts {
    fn roots(&self) -> Vec<Var> {
        let mut r: Vec<Var> = self.states.iter().map(|s| s.next.clone()).collect();
        r.extend(self.extras.iter().cloned());
        r.extend(self.until.iter().cloned());
        r
    }

    fn inner_inputs(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.seqs.iter().flat_map(|s| s.ph.iter().cloned()).collect();
        v.extend(self.states.iter().flat_map(|s| s.ph.iter().cloned()));
        v.extend(self.nonseqs.iter().map(|n| n.ph.clone()));
        v
    }

    /// Replaces inner variables everywhere in the body.
    fn substitute(&mut self, subs: &HashMap<VarId, Var>) -> Result<()> {
        let roots = self.roots();
        let map = rebuild(&roots, subs, reapply)?;
        for s in &mut self.states {
            s.next = mapped(&map, &s.next);
        }
        for e in &mut self.extras {
            *e = mapped(&map, e);
        }
        if let Some(u) = &mut self.until {
            *u = mapped(&map, u);
        }
        Ok(())
    }

    /// Ids of inner leaves the body actually reads.
    fn used(&self) -> HashSet<VarId> {
        let roots = self.roots();
        let mut used: HashSet<VarId> = roots.iter().map(Var::id).collect();
        for n in reachable_nodes(&roots, &HashSet::new()) {
            used.extend(n.inputs.iter().map(Var::id));
        }
        used
    }

    fn assemble(&self) -> Result<Vec<Var>> {
        let inner = Graph::new(self.inner_inputs(), self.roots());
        let op = ScanOp::new(
            inner,
            self.seqs.iter().map(|s| s.taps.clone()).collect(),
            self.states.iter().map(|s| s.taps.clone()).collect(),
            self.nonseqs.len(),
            self.extras.len(),
            self.steps,
            self.until.is_some(),
            self.go_backwards,
        )?;
        let op = op.with_buffers(self.states.iter().map(|s| s.buffer).collect());
        let mut outer: Vec<Var> = self.steps_var.iter().cloned().collect();
        outer.extend(self.seqs.iter().map(|s| s.outer.clone()));
        outer.extend(self.states.iter().map(|s| s.init.clone()));
        outer.extend(self.nonseqs.iter().map(|n| n.outer.clone()));
        apply(Op::Scan(Arc::new(op)), &outer)
    }

    fn span(&self, i: usize) -> usize {
        let t = &self.seqs[i].taps;
        (t.iter().max().unwrap() - t.iter().min().unwrap()) as usize
    }
}

/// A variable that determines `v`'s leading extent: `v` itself unless it is
/// an elementwise or row-wise product of something with the same rows.
fn lead_origin(v: &Var) -> VarId {
    let mut v = v.clone();
    loop {
        let Some((n, _)) = v.owner() else { return v.id() };
        let r = v.ty().rank();
        let next = match &n.op {
            Op::Elemwise(_) | Op::Composite(_) if r > 0 => {
                let full: Vec<&Var> = n.inputs.iter().filter(|x| x.ty().rank() == r).collect();
                match full.first() {
                    Some(first) => {
                        let o = lead_origin(first);
                        full.iter().all(|x| lead_origin(x) == o).then(|| (*first).clone())
                    }
                    None => None,
                }
            }
            Op::Dot if n.inputs[0].ty().rank() == 2 => Some(n.inputs[0].clone()),
            _ => None,
        };
        match next {
            Some(x) => v = x,
            None => return v.id(),
        }
    }
}

/// Whether two sequences certainly have the same leading extent.
fn same_length(a: &Var, c: &Var) -> bool {
    if let (Some(Dim::Known(x)), Some(Dim::Known(y))) = (a.ty().dims.first(), c.ty().dims.first()) {
        return x == y;
    }
    a == c || lead_origin(a) == lead_origin(c)
}

fn is_constant(v: &Var) -> bool {
    matches!(v.kind(), VarKind::Constant(_))
}

/// Moves computations that depend only on non-sequences out of the body.
fn hoist_invariant_exprs(p: &mut Parts) -> Result<bool> {
    let roots = p.roots();
    let order = toposort_vars(&roots)?;
    let mut inv: HashSet<VarId> = p.nonseqs.iter().map(|n| n.ph.id()).collect();
    let mut dep: HashSet<VarId> = inv.clone();
    for n in &order {
        if n.inputs.iter().all(|v| inv.contains(&v.id()) || is_constant(v)) {
            inv.extend(n.output_ids().iter().copied());
            if n.inputs.iter().any(|v| dep.contains(&v.id())) {
                dep.extend(n.output_ids().iter().copied());
            }
        }
    }
    let mut frontier: Vec<Var> = Vec::new();
    let mut seen = HashSet::new();
    let mut take = |v: &Var, frontier: &mut Vec<Var>| {
        if v.owner().is_some() && dep.contains(&v.id()) && seen.insert(v.id()) {
            frontier.push(v.clone());
        }
    };
    for n in &order {
        if !n.output_ids().iter().all(|id| inv.contains(id)) {
            for v in &n.inputs {
                take(v, &mut frontier);
            }
        }
    }
    for r in &roots {
        take(r, &mut frontier);
    }
    if frontier.is_empty() {
        return Ok(false);
    }
    let outer_subs: HashMap<VarId, Var> = p.nonseqs.iter().map(|n| (n.ph.id(), n.outer.clone())).collect();
    let map = rebuild(&frontier, &outer_subs, |node, ins| apply(node.op.clone(), &ins))?;
    let mut inner_subs = HashMap::new();
    for f in frontier {
        let ph = Var::placeholder(f.ty().clone());
        p.nonseqs.push(NonseqPart { outer: mapped(&map, &f), ph: ph.clone() });
        inner_subs.insert(f.id(), ph);
    }
    p.substitute(&inner_subs)?;
    Ok(true)
}

/// Outer form of an inner leaf that is a non-sequence or a constant.
fn invariant_outer(p: &Parts, v: &Var) -> Option<Var> {
    if is_constant(v) {
        return Some(v.clone());
    }
    p.nonseqs.iter().find(|n| n.ph == *v).map(|n| n.outer.clone())
}

/// Index of the single-tap sequence whose placeholder is `v`.
fn single_tap_seq(p: &Parts, v: &Var) -> Option<usize> {
    p.seqs.iter().position(|s| s.ph.len() == 1 && s.ph[0] == *v)
}

/// The whole-sequence form of an inner node that maps sequence slices one
/// to one, when there is one.
fn seq_form(p: &Parts, n: &Arc<ApplyNode>) -> Result<Option<Var>> {
    if n.n_outputs() != 1 {
        return Ok(None);
    }
    let out_rank = n.output_types()[0].rank();
    match &n.op {
        Op::Elemwise(_) | Op::Composite(_) => {
            let mut outer = Vec::with_capacity(n.inputs.len());
            let mut seqs: Vec<usize> = Vec::new();
            for v in &n.inputs {
                if let Some(i) = single_tap_seq(p, v) {
                    if v.ty().rank() != out_rank {
                        return Ok(None);
                    }
                    seqs.push(i);
                    outer.push(p.seqs[i].outer.clone());
                } else if let Some(o) = invariant_outer(p, v) {
                    if v.ty().rank() > out_rank {
                        return Ok(None);
                    }
                    outer.push(o);
                } else {
                    return Ok(None);
                }
            }
            let Some(&first) = seqs.first() else { return Ok(None) };
            if !seqs.iter().all(|&i| same_length(&p.seqs[i].outer, &p.seqs[first].outer)) {
                return Ok(None);
            }
            apply(n.op.clone(), &outer).map(|mut v| v.pop())
        }
        Op::Dot => {
            let (a, c) = (&n.inputs[0], &n.inputs[1]);
            let seq_vec = |v: &Var| single_tap_seq(p, v).filter(|_| v.ty().rank() == 1).map(|i| p.seqs[i].outer.clone());
            let inv = |v: &Var| invariant_outer(p, v);
            let r = match (seq_vec(a), seq_vec(c)) {
                (Some(x), None) => match inv(c) {
                    Some(w) if w.ty().rank() <= 2 => Some(b::dot(&x, &w)?),
                    _ => None,
                },
                (None, Some(x)) => match inv(a) {
                    Some(w) if w.ty().rank() == 2 => Some(b::dot(&x, &b::transpose(&w)?)?),
                    Some(w) if w.ty().rank() == 1 => Some(b::dot(&x, &w)?),
                    _ => None,
                },
                _ => None,
            };
            Ok(r)
        }
        _ => Ok(None),
    }
}

/// Replaces per-step elementwise work on sequence slices (and products of
/// slices with invariant matrices) by new sequences computed outside.
fn hoist_seq_exprs(p: &mut Parts) -> Result<bool> {
    let order = toposort_vars(&p.roots())?;
    let mut subs = HashMap::new();
    for n in &order {
        if let Some(outer) = seq_form(p, n)? {
            let out = n.output(0);
            let ph = Var::placeholder(out.ty().clone());
            p.seqs.push(SeqPart { outer, taps: vec![0], ph: vec![ph.clone()] });
            subs.insert(out.id(), ph);
        }
    }
    if subs.is_empty() {
        return Ok(false);
    }
    p.substitute(&subs)?;
    Ok(true)
}

/// Drops inputs the body no longer reads. A sequence that fixes the step
/// count stays unless another of the same length remains.
fn prune(p: &mut Parts) -> bool {
    let used = p.used();
    let before = (p.seqs.len(), p.nonseqs.len());
    p.nonseqs.retain(|n| used.contains(&n.ph.id()));
    let mut i = 0;
    while i < p.seqs.len() {
        let unused = p.seqs[i].ph.iter().all(|v| !used.contains(&v.id()));
        let removable = unused
            && match p.steps {
                Steps::FromSequences => (0..p.seqs.len())
                    .any(|k| k != i && p.span(k) >= p.span(i) && same_length(&p.seqs[k].outer, &p.seqs[i].outer)),
                _ => true,
            };
        if removable {
            p.seqs.remove(i);
        } else {
            i += 1;
        }
    }
    (p.seqs.len(), p.nonseqs.len()) != before
}

/// Whether sequence `i`'s length equals the step count.
fn aligned(p: &Parts, i: usize) -> bool {
    let s = &p.seqs[i];
    if s.taps.len() != 1 {
        return false;
    }
    match p.steps {
        Steps::Fixed(n) => s.outer.ty().dims[0] == Dim::Known(n),
        Steps::Symbolic => false,
        Steps::FromSequences => {
            (0..p.seqs.len()).all(|k| p.span(k) == 0 && same_length(&p.seqs[k].outer, &s.outer))
        }
    }
}

/// A loop without state whose every output is an aligned sequence needs no
/// loop at all.
fn eliminate(p: &Parts) -> Option<Vec<Var>> {
    if !p.states.is_empty() || p.until.is_some() || p.extras.is_empty() {
        return None;
    }
    p.extras
        .iter()
        .map(|e| single_tap_seq(p, e).filter(|&i| aligned(p, i)).map(|i| p.seqs[i].outer.clone()))
        .collect()
}

fn hoist_node(node: &Arc<ApplyNode>) -> Result<Option<Vec<Var>>> {
    let mut p = decompose(node);
    let mut changed = false;
    while hoist_invariant_exprs(&mut p)? | hoist_seq_exprs(&mut p)? {
        changed = true;
    }
    changed |= prune(&mut p);
    if let Some(outs) = eliminate(&p) {
        return Ok(Some(outs));
    }
    if !changed {
        return Ok(None);
    }
    p.assemble().map(Some)
}

/// Rebuilds `g` with the outputs of selected nodes replaced.
fn replace_nodes(
    g: &Graph,
    mut f: impl FnMut(&Arc<ApplyNode>, &[Var]) -> Result<Option<Vec<Var>>>,
) -> Result<(Graph, usize)> {
    let mut count = 0;
    let out = crate::rewrite::transform(g, |node, inputs| {
        if let Op::Scan(_) = node.op {
            let fresh = reapply(node, inputs)?;
            let (current, _) = fresh[0].owner().unwrap();
            let current = current.clone();
            if let Some(outs) = f(&current, &fresh)? {
                count += 1;
                return Ok(outs);
            }
            return Ok(fresh);
        }
        reapply(node, inputs)
    })?;
    Ok((out, count))
}

/// Hoists loop-invariant and per-element work out of every scan and removes
/// loops left with nothing to do. Returns the number of scans changed.
pub fn hoist_pass(g: &Graph) -> Result<(Graph, usize)> {
    replace_nodes(g, |node, _| hoist_node(node))
}

/// Alias of [`hoist_pass`] for direct use.
pub fn hoist_invariants(g: &Graph) -> Result<(Graph, usize)> {
    hoist_pass(g)
}

/// The outputs of a scan with a fixed step count, written out step by step.
fn unroll_node(node: &Arc<ApplyNode>, scan: &ScanOp, n: usize) -> Result<Vec<Var>> {
    let ins = &node.inputs;
    let ns = scan.n_states();
    let mut hist: Vec<VecDeque<Var>> = Vec::with_capacity(ns);
    for j in 0..ns {
        let init = &ins[scan.outer_init(j)];
        hist.push(if scan.plain_init(j) {
            VecDeque::from([init.clone()])
        } else {
            (0..scan.state_depth(j)).map(|k| b::index(init, k as i64)).collect::<Result<_>>()?
        });
    }
    let mut states: Vec<Vec<(usize, Var)>> = vec![Vec::new(); ns];
    let mut extras: Vec<Vec<(usize, Var)>> = vec![Vec::new(); scan.n_extra];
    for t in 0..n {
        let tau = if scan.go_backwards { n - 1 - t } else { t };
        let mut inner_in = Vec::with_capacity(scan.inner.inputs.len());
        for i in 0..scan.n_seqs() {
            let min = scan.seq_min(i);
            for &o in &scan.seq_taps[i] {
                inner_in.push(b::index(&ins[scan.outer_seq(i)], tau as i64 + o - min)?);
            }
        }
        for j in 0..ns {
            for &tap in &scan.state_taps[j] {
                inner_in.push(hist[j][hist[j].len() - tap.unsigned_abs() as usize].clone());
            }
        }
        for k in 0..scan.n_nonseq {
            inner_in.push(ins[scan.outer_nonseq(k)].clone());
        }
        let outs = clone_inner(&scan.inner, &inner_in)?;
        for j in 0..ns {
            hist[j].push_back(outs[j].clone());
            states[j].push((tau, outs[j].clone()));
        }
        for l in 0..scan.n_extra {
            extras[l].push((tau, outs[ns + l].clone()));
        }
    }
    states
        .into_iter()
        .chain(extras)
        .map(|mut steps| {
            steps.sort_by_key(|(tau, _)| *tau);
            b::stack(&steps.into_iter().map(|(_, v)| v).collect::<Vec<_>>())
        })
        .collect()
}

fn unrollable(scan: &ScanOp, max_steps: usize) -> Option<usize> {
    match scan.steps {
        Steps::Fixed(n) if n <= max_steps && !scan.has_until && scan.buffers.iter().all(|b| *b == Buffer::Full) => {
            Some(n)
        }
        _ => None,
    }
}

/// Replaces every scan of exactly one step by its body.
pub fn unroll_pass(g: &Graph) -> Result<(Graph, usize)> {
    replace_nodes(g, |node, _| {
        let Op::Scan(scan) = &node.op else { unreachable!() };
        match unrollable(scan, 1) {
            Some(n) => unroll_node(node, scan, n).map(Some),
            None => Ok(None),
        }
    })
}

/// Alias of [`unroll_pass`] for direct use.
pub fn unroll_single_step(g: &Graph) -> Result<(Graph, usize)> {
    unroll_pass(g)
}

/// Writes out every scan with a fixed step count of at most `max_steps`
/// (and no stop condition) as straight-line code.
pub fn unroll_fixed(g: &Graph, max_steps: usize) -> Result<(Graph, usize)> {
    replace_nodes(g, |node, _| {
        let Op::Scan(scan) = &node.op else { unreachable!() };
        match unrollable(scan, max_steps) {
            Some(n) => unroll_node(node, scan, n).map(Some),
            None => Ok(None),
        }
    })
}

/// Key describing how a loop's step count is determined; loops with equal
/// keys run the same number of steps.
fn steps_key(p: &Parts) -> Option<(Steps, Option<VarId>, Vec<(VarId, usize)>)> {
    match p.steps {
        Steps::Fixed(_) => Some((p.steps, None, Vec::new())),
        Steps::Symbolic => Some((p.steps, p.steps_var.as_ref().map(Var::id), Vec::new())),
        Steps::FromSequences => {
            let mut v: Vec<(VarId, usize)> = (0..p.seqs.len()).map(|i| (lead_origin(&p.seqs[i].outer), p.span(i))).collect();
            v.sort_unstable();
            v.dedup();
            Some((p.steps, None, v))
        }
    }
}

fn mergeable(a: &Arc<ApplyNode>, pa: &Parts, c: &Arc<ApplyNode>, pc: &Parts) -> bool {
    let ok = |p: &Parts| p.until.is_none() && p.states.iter().all(|s| s.buffer == Buffer::Full);
    if !ok(pa) || !ok(pc) || pa.go_backwards != pc.go_backwards {
        return false;
    }
    match (steps_key(pa), steps_key(pc)) {
        (Some(x), Some(y)) if x == y => {}
        _ => return false,
    }
    if let (Steps::Fixed(x), Steps::Fixed(y)) = (pa.steps, pc.steps) {
        if x != y {
            return false;
        }
    }
    let upstream = |n: &Arc<ApplyNode>| -> HashSet<u64> {
        reachable_nodes(&n.inputs, &HashSet::new()).iter().map(|m| m.id()).collect()
    };
    !upstream(a).contains(&c.id()) && !upstream(c).contains(&a.id())
}

/// Fuses two loops over the same iteration space into one. Shared inputs
/// are read once; states that start from the same value and compute the
/// same next value are kept once. Returns the replacement outputs for each.
fn merge_two(a: &Arc<ApplyNode>, c: &Arc<ApplyNode>) -> Result<(Vec<Var>, Vec<Var>)> {
    let (Op::Scan(sa), Op::Scan(sc)) = (&a.op, &c.op) else { unreachable!() };
    let (pa, pc) = (decompose(a), decompose(c));
    let fresh = |v: &Var| Var::placeholder(v.ty().clone());

    let mut seqs: Vec<SeqPart> = Vec::new();
    let mut nonseqs: Vec<NonseqPart> = Vec::new();
    let mut subs_a: HashMap<VarId, Var> = HashMap::new();
    let mut subs_c: HashMap<VarId, Var> = HashMap::new();
    for (p, subs) in [(&pa, &mut subs_a), (&pc, &mut subs_c)] {
        for s in &p.seqs {
            let pos = seqs.iter().position(|x| x.outer == s.outer && x.taps == s.taps);
            let target = match pos {
                Some(k) => &seqs[k],
                None => {
                    seqs.push(SeqPart { outer: s.outer.clone(), taps: s.taps.clone(), ph: s.ph.iter().map(fresh).collect() });
                    seqs.last().unwrap()
                }
            };
            for (old, new) in s.ph.iter().zip(&target.ph) {
                subs.insert(old.id(), new.clone());
            }
        }
        for n in &p.nonseqs {
            let pos = nonseqs.iter().position(|x| x.outer == n.outer);
            let target = match pos {
                Some(k) => &nonseqs[k],
                None => {
                    nonseqs.push(NonseqPart { outer: n.outer.clone(), ph: fresh(&n.ph) });
                    nonseqs.last().unwrap()
                }
            };
            subs.insert(n.ph.id(), target.ph.clone());
        }
    }
    let ph_a: Vec<Vec<Var>> = pa.states.iter().map(|s| s.ph.iter().map(fresh).collect()).collect();
    let ph_c: Vec<Vec<Var>> = pc.states.iter().map(|s| s.ph.iter().map(fresh).collect()).collect();
    for (s, ph) in pa.states.iter().zip(&ph_a) {
        for (old, new) in s.ph.iter().zip(ph) {
            subs_a.insert(old.id(), new.clone());
        }
    }
    let mut pair: Vec<Option<usize>> = pc
        .states
        .iter()
        .map(|s| {
            pa.states.iter().position(|t| t.init == s.init && t.taps == s.taps && t.ph[0].ty() == s.ph[0].ty())
        })
        .collect();

    let na = pa.states.len();
    let inner_in_a: Vec<Var> = sa.inner.inputs.iter().map(|v| mapped(&subs_a, v)).collect();
    let outs_a = clone_inner(&sa.inner, &inner_in_a)?;
    let (body, outs_c) = loop {
        let mut subs = subs_c.clone();
        for (j, s) in pc.states.iter().enumerate() {
            let ph = match pair[j] {
                Some(k) => &ph_a[k],
                None => &ph_c[j],
            };
            for (old, new) in s.ph.iter().zip(ph) {
                subs.insert(old.id(), new.clone());
            }
        }
        let inner_in_c: Vec<Var> = sc.inner.inputs.iter().map(|v| mapped(&subs, v)).collect();
        let outs_c = clone_inner(&sc.inner, &inner_in_c)?;
        let mut all = outs_a.clone();
        all.extend(outs_c.iter().cloned());
        let (g, _) = cse(&Graph::new(Vec::new(), all))?;
        let mut broke = false;
        for j in 0..pc.states.len() {
            if let Some(k) = pair[j] {
                if g.outputs[k] != g.outputs[outs_a.len() + j] {
                    pair[j] = None;
                    broke = true;
                }
            }
        }
        if !broke {
            break (g.outputs[..outs_a.len()].to_vec(), g.outputs[outs_a.len()..].to_vec());
        }
    };

    let mut states: Vec<StatePart> = pa
        .states
        .iter()
        .enumerate()
        .map(|(j, s)| StatePart { init: s.init.clone(), taps: s.taps.clone(), ph: ph_a[j].clone(), next: body[j].clone(), buffer: Buffer::Full })
        .collect();
    let mut c_state_pos = Vec::with_capacity(pc.states.len());
    for (j, s) in pc.states.iter().enumerate() {
        match pair[j] {
            Some(k) => c_state_pos.push(k),
            None => {
                c_state_pos.push(states.len());
                states.push(StatePart {
                    init: s.init.clone(),
                    taps: s.taps.clone(),
                    ph: ph_c[j].clone(),
                    next: outs_c[j].clone(),
                    buffer: Buffer::Full,
                });
            }
        }
    }
    let mut extras: Vec<Var> = body[na..].to_vec();
    extras.extend(outs_c[pc.states.len()..].iter().cloned());
    let merged = Parts { steps: pa.steps, steps_var: pa.steps_var.clone(), go_backwards: pa.go_backwards, seqs, states, nonseqs, extras, until: None };
    let outs = merged.assemble()?;
    let n_states = merged.states.len();
    let mut out_a: Vec<Var> = outs[..na].to_vec();
    out_a.extend(outs[n_states..n_states + pa.extras.len()].iter().cloned());
    let mut out_c: Vec<Var> = c_state_pos.iter().map(|&k| outs[k].clone()).collect();
    out_c.extend(outs[n_states + pa.extras.len()..].iter().cloned());
    Ok((out_a, out_c))
}

/// Merges scans that iterate over the same steps and do not feed each
/// other. Returns the number of merges.
pub fn merge_pass(g: &Graph) -> Result<(Graph, usize)> {
    let mut g = g.clone();
    let mut merges = 0;
    'outer: loop {
        let scans: Vec<Arc<ApplyNode>> = g.toposort()?.into_iter().filter(|n| matches!(n.op, Op::Scan(_))).collect();
        let parts: Vec<Parts> = scans.iter().map(decompose).collect();
        for x in 0..scans.len() {
            for y in x + 1..scans.len() {
                if !mergeable(&scans[x], &parts[x], &scans[y], &parts[y]) {
                    continue;
                }
                let (ox, oy) = merge_two(&scans[x], &scans[y])?;
                let mut subs = HashMap::new();
                for (id, v) in scans[x].output_ids().iter().zip(ox).chain(scans[y].output_ids().iter().zip(oy)) {
                    subs.insert(*id, v);
                }
                let map = rebuild(&g.roots(), &subs, reapply)?;
                g = Graph {
                    inputs: g.inputs.clone(),
                    outputs: g.outputs.iter().map(|v| mapped(&map, v)).collect(),
                    updates: g.updates.iter().map(|(t, e)| (t.clone(), mapped(&map, e))).collect(),
                };
                merges += 1;
                continue 'outer;
            }
        }
        break;
    }
    Ok((g, merges))
}

/// Alias of [`merge_pass`] for direct use.
pub fn merge_scans(g: &Graph) -> Result<(Graph, usize)> {
    merge_pass(g)
}

/// Optimizes every scan body with the same settings as the outer graph.
pub fn inner_pass(g: &Graph, config: &Config) -> Result<(Graph, usize)> {
    replace_nodes(g, |node, _| {
        let Op::Scan(scan) = &node.op else { unreachable!() };
        let (inner, _) = optimize_with(&scan.inner, config);
        if inner.structurally_eq(&scan.inner) {
            return Ok(None);
        }
        apply(Op::Scan(Arc::new(scan.with_inner(inner))), &node.inputs).map(Some)
    })
}
