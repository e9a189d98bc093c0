//! Symbolic loops.
//!
//! A scan node runs an inner graph once per step. The inner graph's inputs
//! are, in order: one slice per sequence tap, one value per state tap, then
//! the non-sequences. Its outputs are the next value of every state, then any
//! per-step extras, then optionally a scalar stop condition.
//!
//! Outer inputs are `[n_steps]? ++ sequences ++ initial states ++
//! non-sequences`. A state read only at tap -1 takes a plain initial value;
//! otherwise the initial value stacks the `m = max |tap|` earlier states,
//! oldest first. Every state and extra output is stacked along a new leading
//! time axis and does not include the initial values.
//!
//! ```
//! use graphc_core::{builder as b, scan::Scan, DType, Dim, TensorType, Var};
//!
//! let x = Var::input("x", TensorType::vector(DType::F64, Dim::Unknown));
//! let s0 = Var::scalar(0.0);
//! let out = Scan::new()
//!     .sequence(&x)
//!     .state(&s0)
//!     .build(|body| Ok(vec![b::add(body.state(0), body.seq(0))?].into()))
//!     .unwrap();
//! assert_eq!(out.states[0].ty().rank(), 1);
//! ```

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::graph::{apply, id_watermark, rebuild, reapply, ApplyNode, Graph, Var, VarId, VarKind};
use crate::ops::Op;
use crate::types::{DType, Dim, TensorType};
use crate::vm::Program;

pub mod exec;
pub mod grad;
pub mod memory;
pub mod opt;
pub mod rop;

/// How the number of iterations is determined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Steps {
    Fixed(usize),
    /// Read from the first outer input, an integer scalar.
    Symbolic,
    /// The longest run every sequence supports at its taps.
    FromSequences,
}

/// Storage kept for one state's history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Buffer {
    /// Every step's value; the output has one slice per step.
    Full,
    /// Only the most recent `n` values of the history (initial values
    /// included); the output holds those `n` slices.
    Rotating(usize),
}

pub struct ScanOp {
    pub inner: Graph,
    pub seq_taps: Vec<Vec<i64>>,
    pub state_taps: Vec<Vec<i64>>,
    pub n_nonseq: usize,
    pub n_extra: usize,
    pub steps: Steps,
    pub has_until: bool,
    /// Iterate from the last time index down to 0. Outputs are stored at
    /// their time index, so the last computed value sits at index 0.
    pub go_backwards: bool,
    pub buffers: Vec<Buffer>,
    program: OnceLock<Arc<Program>>,
}

impl fmt::Debug for ScanOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScanOp")
            .field("seq_taps", &self.seq_taps)
            .field("state_taps", &self.state_taps)
            .field("n_nonseq", &self.n_nonseq)
            .field("n_extra", &self.n_extra)
            .field("steps", &self.steps)
            .field("has_until", &self.has_until)
            .field("go_backwards", &self.go_backwards)
            .field("buffers", &self.buffers)
            .field("inner_nodes", &self.inner.node_count())
            .finish()
    }
}

/// Same dtype and rank, and no two known extents disagree.
pub(crate) fn compatible(a: &TensorType, b: &TensorType) -> bool {
    a.dtype == b.dtype
        && a.rank() == b.rank()
        && a.dims.iter().zip(&b.dims).all(|(x, y)| match (x, y) {
            (Dim::Known(p), Dim::Known(q)) => p == q,
            _ => true,
        })
}

impl ScanOp {
    /// Assembles and checks a scan description.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        inner: Graph,
        seq_taps: Vec<Vec<i64>>,
        state_taps: Vec<Vec<i64>>,
        n_nonseq: usize,
        n_extra: usize,
        steps: Steps,
        has_until: bool,
        go_backwards: bool,
    ) -> Result<ScanOp> {
        let op = ScanOp {
            buffers: vec![Buffer::Full; state_taps.len()],
            inner,
            seq_taps,
            state_taps,
            n_nonseq,
            n_extra,
            steps,
            has_until,
            go_backwards,
            program: OnceLock::new(),
        };
        op.check()?;
        Ok(op)
    }

    /// Copy with different buffer choices.
    pub fn with_buffers(&self, buffers: Vec<Buffer>) -> ScanOp {
        ScanOp {
            inner: self.inner.clone(),
            seq_taps: self.seq_taps.clone(),
            state_taps: self.state_taps.clone(),
            n_nonseq: self.n_nonseq,
            n_extra: self.n_extra,
            steps: self.steps,
            has_until: self.has_until,
            go_backwards: self.go_backwards,
            buffers,
            program: OnceLock::new(),
        }
    }

    /// Copy with a different inner graph of the same signature.
    pub fn with_inner(&self, inner: Graph) -> ScanOp {
        let mut op = self.with_buffers(self.buffers.clone());
        op.inner = inner;
        op
    }

    fn check(&self) -> Result<()> {
        let err = |m: String| Err(Error::Scan(m));
        for (i, taps) in self.seq_taps.iter().enumerate() {
            if taps.is_empty() {
                return err(format!("sequence {i} has no taps"));
            }
            if taps.iter().collect::<HashSet<_>>().len() != taps.len() {
                return err(format!("sequence {i} has repeated taps"));
            }
        }
        for (j, taps) in self.state_taps.iter().enumerate() {
            if taps.is_empty() {
                return err(format!("state {j} has no taps"));
            }
            if let Some(t) = taps.iter().find(|t| **t >= 0) {
                return err(format!("state {j}: tap {t} must be negative"));
            }
            if taps.iter().collect::<HashSet<_>>().len() != taps.len() {
                return err(format!("state {j} has repeated taps"));
            }
        }
        let n_in = self.n_seq_inputs() + self.n_state_inputs() + self.n_nonseq;
        if self.inner.inputs.len() != n_in {
            return err(format!("inner graph has {} inputs, taps require {n_in}", self.inner.inputs.len()));
        }
        let n_out = self.n_states() + self.n_extra + usize::from(self.has_until);
        if self.inner.outputs.len() != n_out {
            return err(format!("inner graph has {} outputs, expected {n_out}", self.inner.outputs.len()));
        }
        for j in 0..self.n_states() {
            let want = self.inner.inputs[self.state_input(j, 0)].ty();
            for k in 0..self.state_taps[j].len() {
                if self.inner.inputs[self.state_input(j, k)].ty() != want {
                    return err(format!("state {j}: tap inputs differ in type"));
                }
            }
            let got = self.inner.outputs[j].ty();
            if !compatible(want, got) {
                return err(format!("state {j}: next value has type {got}, state has type {want}"));
            }
        }
        if self.has_until {
            let c = self.inner.outputs[n_out - 1].ty();
            if !c.is_scalar() {
                return err(format!("until condition must be a scalar, got {c}"));
            }
            if self.go_backwards {
                return err("until condition is not supported on backward scans".into());
            }
        }
        if self.steps == Steps::FromSequences && self.seq_taps.is_empty() {
            return err("step count from sequences requires at least one sequence".into());
        }
        if self.steps == Steps::Fixed(0) {
            return err("n_steps must be at least 1".into());
        }
        if self.buffers.len() != self.n_states() {
            return err("one buffer choice per state required".into());
        }
        Ok(())
    }

    pub fn n_seqs(&self) -> usize {
        self.seq_taps.len()
    }

    pub fn n_states(&self) -> usize {
        self.state_taps.len()
    }

    pub fn n_seq_inputs(&self) -> usize {
        self.seq_taps.iter().map(Vec::len).sum()
    }

    pub fn n_state_inputs(&self) -> usize {
        self.state_taps.iter().map(Vec::len).sum()
    }

    /// Number of outer inputs before the sequences.
    pub fn steps_offset(&self) -> usize {
        usize::from(self.steps == Steps::Symbolic)
    }

    pub fn n_outer_inputs(&self) -> usize {
        self.steps_offset() + self.n_seqs() + self.n_states() + self.n_nonseq
    }

    pub fn outer_seq(&self, i: usize) -> usize {
        self.steps_offset() + i
    }

    pub fn outer_init(&self, j: usize) -> usize {
        self.steps_offset() + self.n_seqs() + j
    }

    pub fn outer_nonseq(&self, k: usize) -> usize {
        self.steps_offset() + self.n_seqs() + self.n_states() + k
    }

    /// Inner input index of tap `t` (position in `seq_taps[i]`) of sequence `i`.
    pub fn seq_input(&self, i: usize, t: usize) -> usize {
        self.seq_taps[..i].iter().map(Vec::len).sum::<usize>() + t
    }

    pub fn state_input(&self, j: usize, t: usize) -> usize {
        self.n_seq_inputs() + self.state_taps[..j].iter().map(Vec::len).sum::<usize>() + t
    }

    pub fn nonseq_input(&self, k: usize) -> usize {
        self.n_seq_inputs() + self.n_state_inputs() + k
    }

    pub fn seq_min(&self, i: usize) -> i64 {
        *self.seq_taps[i].iter().min().unwrap()
    }

    /// Extra length a sequence needs beyond the step count.
    pub fn seq_span(&self, i: usize) -> usize {
        (self.seq_taps[i].iter().max().unwrap() - self.seq_min(i)) as usize
    }

    /// Number of earlier values a state reads (`max |tap|`).
    pub fn state_depth(&self, j: usize) -> usize {
        self.state_taps[j].iter().map(|t| t.unsigned_abs() as usize).max().unwrap()
    }

    pub fn plain_init(&self, j: usize) -> bool {
        self.state_taps[j] == [-1]
    }

    /// Type of one value of state `j`.
    pub fn state_type(&self, j: usize) -> &TensorType {
        self.inner.inputs[self.state_input(j, 0)].ty()
    }

    /// Type the outer initial value of state `j` must have.
    pub fn init_type(&self, j: usize) -> TensorType {
        let st = self.state_type(j);
        if self.plain_init(j) {
            st.clone()
        } else {
            st.stacked(Dim::Known(self.state_depth(j)))
        }
    }

    /// The compiled inner graph, built on first use.
    pub fn program(&self) -> Result<Arc<Program>> {
        if let Some(p) = self.program.get() {
            return Ok(p.clone());
        }
        let p = Arc::new(Program::new(&self.inner)?);
        Ok(self.program.get_or_init(|| p).clone())
    }

    fn static_steps(&self, tys: &[&TensorType]) -> Dim {
        if self.has_until {
            return Dim::Unknown;
        }
        match self.steps {
            Steps::Fixed(n) => Dim::Known(n),
            Steps::Symbolic => Dim::Unknown,
            Steps::FromSequences => {
                let mut best: Option<usize> = None;
                for i in 0..self.n_seqs() {
                    match tys[self.outer_seq(i)].dims[0] {
                        Dim::Known(n) => {
                            let avail = n.saturating_sub(self.seq_span(i));
                            best = Some(best.map_or(avail, |b| b.min(avail)));
                        }
                        Dim::Unknown => return Dim::Unknown,
                    }
                }
                best.map_or(Dim::Unknown, Dim::Known)
            }
        }
    }

    /// Output types for the given outer input types.
    pub fn infer(&self, tys: &[&TensorType]) -> Result<Vec<TensorType>> {
        let bad = |idx: usize, msg: String| Err(Error::ty("scan", Some(idx), msg));
        if tys.len() != self.n_outer_inputs() {
            return Err(Error::ty("scan", None, format!("expected {} inputs, got {}", self.n_outer_inputs(), tys.len())));
        }
        if self.steps == Steps::Symbolic && (!tys[0].is_scalar() || tys[0].dtype != DType::I64) {
            return bad(0, format!("step count must be an i64 scalar, got {}", tys[0]));
        }
        for i in 0..self.n_seqs() {
            let idx = self.outer_seq(i);
            let Some(slice) = tys[idx].slice_type() else {
                return bad(idx, "sequence must have rank at least 1".into());
            };
            let want = self.inner.inputs[self.seq_input(i, 0)].ty();
            if !compatible(&slice, want) {
                return bad(idx, format!("sequence slice type {slice} does not match inner input {want}"));
            }
            if let (Dim::Known(n), Steps::Fixed(t)) = (tys[idx].dims[0], self.steps) {
                if n < t + self.seq_span(i) {
                    return bad(idx, format!("sequence of length {n} is shorter than {} required", t + self.seq_span(i)));
                }
            }
        }
        for j in 0..self.n_states() {
            let idx = self.outer_init(j);
            let want = self.init_type(j);
            if !compatible(tys[idx], &want) {
                return bad(idx, format!("initial state type {} does not match {want}", tys[idx]));
            }
        }
        for k in 0..self.n_nonseq {
            let idx = self.outer_nonseq(k);
            let want = self.inner.inputs[self.nonseq_input(k)].ty();
            if !compatible(tys[idx], want) {
                return bad(idx, format!("non-sequence type {} does not match inner input {want}", tys[idx]));
            }
        }
        let lead = self.static_steps(tys);
        let mut out = Vec::with_capacity(self.n_states() + self.n_extra);
        for j in 0..self.n_states() {
            let d = match self.buffers[j] {
                Buffer::Full => lead,
                Buffer::Rotating(n) => Dim::Known(n),
            };
            out.push(self.state_type(j).stacked(d));
        }
        for l in 0..self.n_extra {
            out.push(self.inner.outputs[self.n_states() + l].ty().stacked(lead));
        }
        Ok(out)
    }
}

/// Step-count choice for [`Scan`].
#[derive(Debug, Clone)]
pub enum StepCount {
    FromSequences,
    Fixed(usize),
    Symbolic(Var),
}

/// Placeholders handed to a scan body.
pub struct Body {
    seqs: Vec<Vec<Var>>,
    states: Vec<Vec<Var>>,
    nonseqs: Vec<Var>,
}

impl Body {
    /// Current slice of sequence `i` at its first tap.
    pub fn seq(&self, i: usize) -> &Var {
        &self.seqs[i][0]
    }

    pub fn seq_tap(&self, i: usize, t: usize) -> &Var {
        &self.seqs[i][t]
    }

    /// Value of state `j` at its first tap.
    pub fn state(&self, j: usize) -> &Var {
        &self.states[j][0]
    }

    pub fn state_tap(&self, j: usize, t: usize) -> &Var {
        &self.states[j][t]
    }

    pub fn nonseq(&self, k: usize) -> &Var {
        &self.nonseqs[k]
    }
}

/// What a scan body returns for one step.
#[derive(Debug, Clone, Default)]
pub struct Step {
    pub next: Vec<Var>,
    pub extra: Vec<Var>,
    pub until: Option<Var>,
}

impl From<Vec<Var>> for Step {
    fn from(next: Vec<Var>) -> Step {
        Step { next, ..Step::default() }
    }
}

impl Step {
    pub fn with_extra(mut self, extra: Vec<Var>) -> Step {
        self.extra = extra;
        self
    }

    pub fn until(mut self, cond: Var) -> Step {
        self.until = Some(cond);
        self
    }
}

/// Results of [`Scan::build`].
#[derive(Debug, Clone)]
pub struct ScanOutputs {
    pub states: Vec<Var>,
    pub extras: Vec<Var>,
    pub node: Arc<ApplyNode>,
}

/// Builder for scan nodes.
#[derive(Debug, Clone)]
pub struct Scan {
    seqs: Vec<(Var, Vec<i64>)>,
    states: Vec<(Var, Vec<i64>)>,
    nonseqs: Vec<Var>,
    steps: StepCount,
    go_backwards: bool,
}

impl Default for Scan {
    fn default() -> Self {
        Scan::new()
    }
}

impl Scan {
    pub fn new() -> Scan {
        Scan { seqs: Vec::new(), states: Vec::new(), nonseqs: Vec::new(), steps: StepCount::FromSequences, go_backwards: false }
    }

    pub fn sequence(self, x: &Var) -> Scan {
        self.sequence_taps(x, &[0])
    }

    pub fn sequence_taps(mut self, x: &Var, taps: &[i64]) -> Scan {
        self.seqs.push((x.clone(), taps.to_vec()));
        self
    }

    /// A state read at tap -1, starting from `init`.
    pub fn state(self, init: &Var) -> Scan {
        self.state_taps(init, &[-1])
    }

    /// A state read at the given negative taps; `init` stacks the
    /// `max |tap|` earlier values, oldest first (plain for `[-1]`).
    pub fn state_taps(mut self, init: &Var, taps: &[i64]) -> Scan {
        self.states.push((init.clone(), taps.to_vec()));
        self
    }

    pub fn nonsequence(mut self, v: &Var) -> Scan {
        self.nonseqs.push(v.clone());
        self
    }

    pub fn fixed_steps(mut self, n: usize) -> Scan {
        self.steps = StepCount::Fixed(n);
        self
    }

    pub fn n_steps(mut self, n: &Var) -> Scan {
        self.steps = StepCount::Symbolic(n.clone());
        self
    }

    pub fn steps(mut self, s: StepCount) -> Scan {
        self.steps = s;
        self
    }

    pub fn go_backwards(mut self, yes: bool) -> Scan {
        self.go_backwards = yes;
        self
    }

    /// Builds the loop. Outer variables the body refers to directly (other
    /// than constants) are captured as extra non-sequences.
    pub fn build(self, body: impl FnOnce(&Body) -> Result<Step>) -> Result<ScanOutputs> {
        let mut seq_ph = Vec::new();
        for (i, (x, taps)) in self.seqs.iter().enumerate() {
            let st = x.ty().slice_type().ok_or_else(|| Error::Scan(format!("sequence {i} must have rank at least 1")))?;
            seq_ph.push(taps.iter().map(|_| Var::placeholder(st.clone())).collect::<Vec<_>>());
        }
        let mut state_ph = Vec::new();
        for (j, (init, taps)) in self.states.iter().enumerate() {
            let st = if taps.as_slice() == [-1] {
                init.ty().clone()
            } else {
                init.ty().slice_type().ok_or_else(|| Error::Scan(format!("state {j}: stacked initial value needs rank ≥ 1")))?
            };
            state_ph.push(taps.iter().map(|_| Var::placeholder(st.clone())).collect::<Vec<_>>());
        }
        let nonseq_ph: Vec<Var> = self.nonseqs.iter().map(|v| Var::placeholder(v.ty().clone())).collect();
        let watermark = id_watermark();
        let b = Body { seqs: seq_ph, states: state_ph, nonseqs: nonseq_ph };
        let step = body(&b)?;
        if step.next.len() != self.states.len() {
            return Err(Error::Scan(format!("body returned {} next states for {} states", step.next.len(), self.states.len())));
        }

        let mut roots: Vec<Var> = step.next.iter().chain(&step.extra).cloned().collect();
        roots.extend(step.until.iter().cloned());

        let placeholders: HashSet<VarId> = b
            .seqs
            .iter()
            .flatten()
            .chain(b.states.iter().flatten())
            .chain(&b.nonseqs)
            .map(Var::id)
            .collect();
        let captured = free_vars(&roots, &placeholders, watermark);
        let mut nonseqs = self.nonseqs.clone();
        let mut inner_nonseq = b.nonseqs.clone();
        let mut subs: HashMap<VarId, Var> = HashMap::new();
        for v in captured {
            let ph = Var::placeholder(v.ty().clone());
            subs.insert(v.id(), ph.clone());
            nonseqs.push(v);
            inner_nonseq.push(ph);
        }
        let roots = if subs.is_empty() {
            roots
        } else {
            let map = rebuild(&roots, &subs, reapply)?;
            roots.iter().map(|v| crate::graph::mapped(&map, v)).collect()
        };

        let mut inner_inputs: Vec<Var> = b.seqs.iter().flatten().cloned().collect();
        inner_inputs.extend(b.states.iter().flatten().cloned());
        inner_inputs.extend(inner_nonseq);
        let inner = Graph::new(inner_inputs, roots);

        let (steps, steps_var) = match &self.steps {
            StepCount::FromSequences => (Steps::FromSequences, None),
            StepCount::Fixed(n) => (Steps::Fixed(*n), None),
            StepCount::Symbolic(v) => (Steps::Symbolic, Some(v.clone())),
        };
        let op = ScanOp::new(
            inner,
            self.seqs.iter().map(|(_, t)| t.clone()).collect(),
            self.states.iter().map(|(_, t)| t.clone()).collect(),
            nonseqs.len(),
            step.extra.len(),
            steps,
            step.until.is_some(),
            self.go_backwards,
        )?;
        let mut outer: Vec<Var> = steps_var.into_iter().collect();
        outer.extend(self.seqs.iter().map(|(x, _)| x.clone()));
        outer.extend(self.states.iter().map(|(s, _)| s.clone()));
        outer.extend(nonseqs);
        let outs = apply(Op::Scan(Arc::new(op)), &outer)?;
        let node = outs.first().and_then(|v| v.owner().map(|(n, _)| n.clone()));
        let node = node.ok_or_else(|| Error::Scan("scan has no outputs".into()))?;
        let n_states = self.states.len();
        Ok(ScanOutputs { states: outs[..n_states].to_vec(), extras: outs[n_states..].to_vec(), node })
    }
}

/// Outer variables reachable from `roots` without passing through
/// `placeholders`: anything created before `watermark` that is not a
/// constant. Returned in first-seen order.
fn free_vars(roots: &[Var], placeholders: &HashSet<VarId>, watermark: u64) -> Vec<Var> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut stack: Vec<Var> = roots.iter().rev().cloned().collect();
    while let Some(v) = stack.pop() {
        if placeholders.contains(&v.id()) || !seen.insert(v.id()) {
            continue;
        }
        if matches!(v.kind(), VarKind::Constant(_)) {
            continue;
        }
        if v.id() < watermark {
            out.push(v);
            continue;
        }
        if let Some((node, _)) = v.owner() {
            stack.extend(node.inputs.iter().rev().cloned());
        } else {
            // An input created inside the body but not declared: capture it
            // so the failure surfaces as a missing outer input.
            out.push(v);
        }
    }
    out
}

/// Number of scan nodes among `g`'s nodes (inner graphs not included).
pub fn count_scans(g: &Graph) -> usize {
    g.nodes().iter().filter(|n| matches!(n.op, Op::Scan(_))).count()
}

/// Copies `inner`'s computation onto `inputs` with fresh nodes throughout
/// and returns the copied outputs.
pub(crate) fn clone_inner(inner: &Graph, inputs: &[Var]) -> Result<Vec<Var>> {
    let subs: HashMap<VarId, Var> = inner.inputs.iter().map(Var::id).zip(inputs.iter().cloned()).collect();
    let map = rebuild(&inner.outputs, &subs, |node, ins| apply(node.op.clone(), &ins))?;
    Ok(inner.outputs.iter().map(|v| crate::graph::mapped(&map, v)).collect())
}
