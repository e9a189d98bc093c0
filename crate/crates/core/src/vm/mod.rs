//! Lazy virtual machine.
//!
//! [`compile`] optimizes a graph and turns it into a [`Program`]: a
//! topologically ordered list of steps over numbered storage slots. A
//! [`Machine`] holds the per-call cells and runs a program either eagerly
//! (every step in order) or lazily (walking back from the demanded outputs,
//! letting `if_else` pick one branch). [`CompiledFunction`] ties a program,
//! a machine and shared-variable updates together.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::{Arc, MutexGuard};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ApplyNode, Graph, SharedValue, Var, VarId, VarKind};
use crate::ops::kernels::{eval_into, eval_kernel};
use crate::ops::Op;
use crate::rewrite::{self, Level, PassReport};
use crate::tensor::Tensor;
use crate::types::TensorType;

/// Runtime switches.
#[derive(Debug, Clone, PartialEq)]
pub struct Options {
    /// Release intermediate cells after their last consumer.
    pub gc: bool,
    /// Skip per-call input checking and conversion.
    pub trust_input: bool,
    /// Demand-driven evaluation; `false` runs every step in order.
    pub lazy: bool,
    /// Optimization level; `None` reads `GRAPHC_OPT_LEVEL`, else default.
    pub opt_level: Option<Level>,
    /// Rewrite rules to leave out, by name.
    pub disabled_rules: Vec<String>,
    /// Record wall time per step in the profile.
    pub timing: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { gc: true, trust_input: false, lazy: true, opt_level: None, disabled_rules: Vec::new(), timing: false }
    }
}

impl Options {
    pub fn level(mut self, level: Level) -> Self {
        self.opt_level = Some(level);
        self
    }

    pub fn nogc(mut self) -> Self {
        self.gc = false;
        self
    }

    pub fn trusted(mut self) -> Self {
        self.trust_input = true;
        self
    }

    pub fn eager(mut self) -> Self {
        self.lazy = false;
        self
    }

    /// The level actually used: explicit, else the environment, else default.
    pub fn effective_level(&self) -> Level {
        self.opt_level.unwrap_or_else(|| {
            std::env::var("GRAPHC_OPT_LEVEL").ok().and_then(|s| Level::parse(&s)).unwrap_or(Level::Default)
        })
    }
}

#[derive(Debug, Clone)]
enum Source {
    Input(usize),
    Const(Arc<Tensor>),
    Shared(usize),
    Node,
}

/// One scheduled node.
#[derive(Debug, Clone)]
pub struct Step {
    pub node: Arc<ApplyNode>,
    pub name: String,
    ins: Vec<usize>,
    outs: Vec<usize>,
}

impl Step {
    pub fn op(&self) -> &Op {
        &self.node.op
    }
}

/// A graph lowered to slots and a schedule.
#[derive(Debug)]
pub struct Program {
    sources: Vec<Source>,
    steps: Vec<Step>,
    producer: Vec<usize>,
    input_types: Vec<TensorType>,
    shared: Vec<SharedValue>,
    outputs: Vec<usize>,
    updates: Vec<(usize, usize)>,
    consumers: Vec<u32>,
    pinned: Vec<bool>,
}

const NO_PRODUCER: usize = usize::MAX;

impl Program {
    /// Lowers `g` as is, without optimizing it.
    pub fn new(g: &Graph) -> Result<Program> {
        let order = g.toposort()?;
        let mut slot_of: HashMap<VarId, usize> = HashMap::new();
        let mut sources = Vec::new();
        let mut shared: Vec<(VarId, SharedValue)> = g
            .shared_vars()
            .iter()
            .map(|v| (v.id(), v.shared_value().unwrap().clone()))
            .collect();
        shared.sort_by_key(|(id, _)| *id);
        let shared_index: HashMap<VarId, usize> = shared.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();

        for (i, v) in g.inputs.iter().enumerate() {
            slot_of.entry(v.id()).or_insert_with(|| {
                sources.push(Source::Input(i));
                sources.len() - 1
            });
        }
        let mut slot = |v: &Var, sources: &mut Vec<Source>| -> Result<usize> {
            if let Some(s) = slot_of.get(&v.id()) {
                return Ok(*s);
            }
            let src = match v.kind() {
                VarKind::Input => {
                    return Err(Error::Invalid(vec![format!("missing input: {} is used but not declared", v.label())]))
                }
                VarKind::Constant(t) => Source::Const(t.clone()),
                VarKind::Shared(_) => Source::Shared(shared_index[&v.id()]),
                VarKind::Output { .. } => Source::Node,
            };
            sources.push(src);
            slot_of.insert(v.id(), sources.len() - 1);
            Ok(sources.len() - 1)
        };

        let mut steps = Vec::with_capacity(order.len());
        for (idx, node) in order.iter().enumerate() {
            let ins = node.inputs.iter().map(|v| slot(v, &mut sources)).collect::<Result<Vec<_>>>()?;
            let outs = node.outputs().iter().map(|v| slot(v, &mut sources)).collect::<Result<Vec<_>>>()?;
            steps.push(Step { node: node.clone(), name: format!("{idx}:{}", node.op.name()), ins, outs });
        }
        let outputs = g.outputs.iter().map(|v| slot(v, &mut sources)).collect::<Result<Vec<_>>>()?;
        let updates = g
            .updates
            .iter()
            .map(|(t, e)| Ok((shared_index[&t.id()], slot(e, &mut sources)?)))
            .collect::<Result<Vec<_>>>()?;

        let n = sources.len();
        let mut producer = vec![NO_PRODUCER; n];
        let mut consumers = vec![0u32; n];
        for (si, s) in steps.iter().enumerate() {
            for &o in &s.outs {
                producer[o] = si;
            }
            let mut seen = s.ins.clone();
            seen.sort_unstable();
            seen.dedup();
            for i in seen {
                consumers[i] += 1;
            }
        }
        let mut pinned = vec![false; n];
        for &o in &outputs {
            pinned[o] = true;
        }
        for &(_, e) in &updates {
            pinned[e] = true;
        }
        Ok(Program {
            sources,
            steps,
            producer,
            input_types: g.inputs.iter().map(|v| v.ty().clone()).collect(),
            shared: shared.into_iter().map(|(_, s)| s).collect(),
            outputs,
            updates,
            consumers,
            pinned,
        })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn n_inputs(&self) -> usize {
        self.input_types.len()
    }

    pub fn input_types(&self) -> &[TensorType] {
        &self.input_types
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    fn is_node(&self, slot: usize) -> bool {
        matches!(self.sources[slot], Source::Node)
    }
}

/// Values visible to a running program besides its own cells.
pub struct Env<'a> {
    pub inputs: &'a [&'a Tensor],
    pub shared: &'a [&'a Tensor],
}

fn lookup<'a>(prog: &'a Program, cells: &'a [Tensor], env: &'a Env<'a>, slot: usize) -> &'a Tensor {
    match &prog.sources[slot] {
        Source::Input(i) => env.inputs[*i],
        Source::Const(t) => t,
        Source::Shared(i) => env.shared[*i],
        Source::Node => &cells[slot],
    }
}

/// Per-call state of a program: value cells and profile counters.
#[derive(Debug, Clone, Default)]
pub struct Machine {
    cells: Vec<Tensor>,
    valid: Vec<bool>,
    done: Vec<bool>,
    refs: Vec<u32>,
    pub counts: Vec<u64>,
    pub nanos: Vec<u64>,
    stack: Vec<usize>,
}

/// How [`Machine::run`] executes.
#[derive(Debug, Clone, Copy)]
pub struct RunMode {
    pub lazy: bool,
    pub gc: bool,
    pub timing: bool,
}

impl Default for RunMode {
    fn default() -> Self {
        RunMode { lazy: true, gc: false, timing: false }
    }
}

impl Machine {
    pub fn new(prog: &Program) -> Machine {
        let n = prog.sources.len();
        let s = prog.steps.len();
        Machine {
            cells: vec![Tensor::default(); n],
            valid: vec![false; n],
            done: vec![false; s],
            refs: vec![0; n],
            counts: vec![0; s],
            nanos: vec![0; s],
            stack: Vec::new(),
        }
    }

    /// Value in `slot` after a run.
    pub fn get<'a>(&'a self, prog: &'a Program, env: &'a Env<'a>, slot: usize) -> &'a Tensor {
        lookup(prog, &self.cells, env, slot)
    }

    /// Value of output `i` after a run.
    pub fn output<'a>(&'a self, prog: &'a Program, env: &'a Env<'a>, i: usize) -> &'a Tensor {
        self.get(prog, env, prog.outputs[i])
    }

    fn ready(&self, prog: &Program, slot: usize) -> bool {
        !prog.is_node(slot) || self.valid[slot]
    }

    /// Computes every output and update expression of `prog`.
    pub fn run(&mut self, prog: &Program, env: &Env<'_>, mode: RunMode) -> Result<()> {
        self.valid.fill(false);
        self.done.fill(false);
        if mode.gc {
            self.refs.copy_from_slice(&prog.consumers);
        }
        if !mode.lazy {
            for si in 0..prog.steps.len() {
                self.exec(prog, env, si, None, mode)?;
            }
        } else {
            let roots = prog.outputs.iter().chain(prog.updates.iter().map(|(_, e)| e));
            let mut stack = std::mem::take(&mut self.stack);
            stack.clear();
            for &r in roots {
                if !self.ready(prog, r) {
                    stack.push(prog.producer[r]);
                }
            }
            let res = self.drain(prog, env, &mut stack, mode);
            self.stack = stack;
            res?;
        }
        if mode.gc {
            for (slot, cell) in self.cells.iter_mut().enumerate() {
                if prog.is_node(slot) && !prog.pinned[slot] && cell.capacity() > 0 {
                    *cell = Tensor::default();
                }
            }
        }
        Ok(())
    }

    fn drain(&mut self, prog: &Program, env: &Env<'_>, stack: &mut Vec<usize>, mode: RunMode) -> Result<()> {
        while let Some(si) = stack.pop() {
            if self.done[si] {
                continue;
            }
            let step = &prog.steps[si];
            if step.node.op.is_lazy() {
                let cond = step.ins[0];
                if !self.ready(prog, cond) {
                    stack.push(si);
                    stack.push(prog.producer[cond]);
                    continue;
                }
                let c = lookup(prog, &self.cells, env, cond)
                    .item()
                    .ok_or_else(|| Error::kernel("if_else", "condition must be a scalar"))?;
                let branch = if c != 0.0 { step.ins[1] } else { step.ins[2] };
                if !self.ready(prog, branch) {
                    stack.push(si);
                    stack.push(prog.producer[branch]);
                    continue;
                }
                self.exec(prog, env, si, Some(branch), mode)?;
            } else {
                let missing = step.ins.iter().copied().find(|&s| !self.ready(prog, s));
                match missing {
                    Some(s) => {
                        stack.push(si);
                        stack.push(prog.producer[s]);
                    }
                    None => self.exec(prog, env, si, None, mode)?,
                }
            }
        }
        Ok(())
    }

    fn exec(&mut self, prog: &Program, env: &Env<'_>, si: usize, branch: Option<usize>, mode: RunMode) -> Result<()> {
        let step = &prog.steps[si];
        let start = mode.timing.then(Instant::now);
        if let Some(b) = branch {
            let o = step.outs[0];
            let mut out = std::mem::take(&mut self.cells[o]);
            out.assign(lookup(prog, &self.cells, env, b));
            self.cells[o] = out;
        } else if let Op::Scan(_) = step.node.op {
            let ins: Vec<&Tensor> = step.ins.iter().map(|&s| lookup(prog, &self.cells, env, s)).collect();
            let outs = eval_kernel(&step.node.op, &ins)?;
            for (&o, t) in step.outs.iter().zip(outs) {
                self.cells[o] = t;
            }
        } else {
            let o = step.outs[0];
            let mut out = [std::mem::take(&mut self.cells[o])];
            let res = {
                let ins: Vec<&Tensor> = step.ins.iter().map(|&s| lookup(prog, &self.cells, env, s)).collect();
                eval_into(&step.node.op, &ins, &mut out)
            };
            let [out] = out;
            self.cells[o] = out;
            res?;
        }
        for &o in &step.outs {
            self.valid[o] = true;
        }
        self.done[si] = true;
        self.counts[si] += 1;
        if let Some(t) = start {
            self.nanos[si] += t.elapsed().as_nanos() as u64;
        }
        if mode.gc {
            let used: &[usize] = match branch {
                Some(b) => &[step.ins[0], b],
                None => &step.ins,
            };
            for (k, &s) in used.iter().enumerate() {
                if !prog.is_node(s) || used[..k].contains(&s) {
                    continue;
                }
                self.refs[s] -= 1;
                if self.refs[s] == 0 && !prog.pinned[s] {
                    self.cells[s] = Tensor::default();
                }
            }
        }
        Ok(())
    }

    fn take_or_clone(&mut self, prog: &Program, env: &Env<'_>, slot: usize, take: bool) -> Tensor {
        if take && prog.is_node(slot) {
            std::mem::take(&mut self.cells[slot])
        } else {
            lookup(prog, &self.cells, env, slot).clone()
        }
    }
}

/// One row of a profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub node: String,
    pub op: String,
    pub count: u64,
    pub nanos: u64,
}

/// An executable graph with its runtime state.
#[derive(Debug)]
pub struct CompiledFunction {
    prog: Arc<Program>,
    machine: Machine,
    opts: Options,
    graph: Graph,
    report: PassReport,
    out_takes: Vec<bool>,
    upd_takes: Vec<bool>,
}

impl Clone for CompiledFunction {
    /// A new context over the same program, with fresh cells and counters.
    fn clone(&self) -> Self {
        CompiledFunction {
            prog: self.prog.clone(),
            machine: Machine::new(&self.prog),
            opts: self.opts.clone(),
            graph: self.graph.clone(),
            report: self.report.clone(),
            out_takes: self.out_takes.clone(),
            upd_takes: self.upd_takes.clone(),
        }
    }
}

/// Optimizes, plans loop memory and lowers `g`.
pub fn compile(g: &Graph, opts: Options) -> Result<CompiledFunction> {
    g.validate().map_err(Error::Invalid)?;
    let config = rewrite::Config { level: opts.effective_level(), disabled: opts.disabled_rules.clone() };
    let (optimized, report) = rewrite::optimize_with(g, &config);
    let planned = crate::scan::memory::plan_graph(&optimized)?;
    let prog = Arc::new(Program::new(&planned)?);

    let mut uses: HashMap<usize, usize> = HashMap::new();
    for &o in prog.outputs.iter().chain(prog.updates.iter().map(|(_, e)| e)) {
        *uses.entry(o).or_default() += 1;
    }
    let out_takes = prog.outputs.iter().map(|o| uses[o] == 1).collect();
    let upd_takes = prog.updates.iter().map(|(_, e)| uses[e] == 1).collect();
    Ok(CompiledFunction { machine: Machine::new(&prog), prog, opts, graph: planned, report, out_takes, upd_takes })
}

fn lock_all(shared: &[SharedValue]) -> Vec<MutexGuard<'_, Tensor>> {
    shared.iter().map(|s| s.lock()).collect()
}

impl CompiledFunction {
    pub fn options(&self) -> &Options {
        &self.opts
    }

    /// Changes the runtime switches that do not require recompiling.
    pub fn set_runtime(&mut self, gc: bool, trust_input: bool, lazy: bool) {
        self.opts.gc = gc;
        self.opts.trust_input = trust_input;
        self.opts.lazy = lazy;
    }

    /// The graph actually executed (after optimization and memory planning).
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn report(&self) -> &PassReport {
        &self.report
    }

    pub fn program(&self) -> &Program {
        &self.prog
    }

    /// Scan nodes executed by each call.
    pub fn scan_count(&self) -> usize {
        self.prog.steps.iter().filter(|s| matches!(s.node.op, Op::Scan(_))).count()
    }

    fn mode(&self) -> RunMode {
        RunMode { lazy: self.opts.lazy, gc: self.opts.gc, timing: self.opts.timing }
    }

    fn check_inputs<'a>(&self, inputs: &'a [Tensor]) -> Result<Vec<Cow<'a, Tensor>>> {
        let types = &self.prog.input_types;
        if inputs.len() != types.len() {
            return Err(Error::Usage(format!("expected {} inputs, got {}", types.len(), inputs.len())));
        }
        if self.opts.trust_input {
            return Ok(inputs.iter().map(Cow::Borrowed).collect());
        }
        inputs
            .iter()
            .zip(types)
            .enumerate()
            .map(|(index, (t, ty))| {
                let t = if t.dtype() == ty.dtype {
                    Cow::Borrowed(t)
                } else if t.dtype().converts_losslessly_to(ty.dtype) {
                    Cow::Owned(t.cast(ty.dtype))
                } else {
                    return Err(Error::Input {
                        index,
                        msg: format!("cannot convert {} to {} without losing precision", t.dtype(), ty.dtype),
                    });
                };
                if !ty.admits_shape(t.shape()) {
                    return Err(Error::Input { index, msg: format!("shape {:?} does not fit type {ty}", t.shape()) });
                }
                Ok(t)
            })
            .collect()
    }

    /// Runs once, optionally collecting outputs, then applies the updates.
    fn run_once(&mut self, inputs: &[&Tensor], collect: bool) -> Result<Vec<Tensor>> {
        let prog = self.prog.clone();
        let mode = self.mode();
        let mut guards = lock_all(&prog.shared);
        let (outs, news) = {
            let shared: Vec<&Tensor> = guards.iter().map(|g| &**g).collect();
            let env = Env { inputs, shared: &shared };
            self.machine.run(&prog, &env, mode)?;
            let mut outs = Vec::new();
            if collect {
                for (i, &o) in prog.outputs.iter().enumerate() {
                    let take = self.out_takes[i] && mode.gc;
                    outs.push(self.machine.take_or_clone(&prog, &env, o, take));
                }
            }
            let mut news = Vec::with_capacity(prog.updates.len());
            for (u, &(_, e)) in prog.updates.iter().enumerate() {
                news.push(self.machine.take_or_clone(&prog, &env, e, self.upd_takes[u]));
            }
            (outs, news)
        };
        for (&(k, e), new) in prog.updates.iter().zip(news) {
            let old = std::mem::replace(&mut *guards[k], new);
            if !mode.gc && prog.is_node(e) {
                self.machine.cells[e] = old;
            }
        }
        Ok(outs)
    }

    /// Evaluates the function. Updates are applied after all outputs and
    /// update expressions are computed.
    pub fn call(&mut self, inputs: Vec<Tensor>) -> Result<Vec<Tensor>> {
        let checked = self.check_inputs(&inputs)?;
        let refs: Vec<&Tensor> = checked.iter().map(|c| c.as_ref()).collect();
        self.run_once(&refs, true)
    }

    /// Calls a function without inputs `n` times, returning the last outputs.
    pub fn call_repeated(&mut self, n: usize) -> Result<Vec<Tensor>> {
        if n == 0 {
            return Err(Error::Usage("call_repeated needs a positive number of calls".into()));
        }
        if self.prog.n_inputs() > 0 {
            return Err(Error::Usage(format!(
                "call_repeated needs a function without inputs, this one takes {}",
                self.prog.n_inputs()
            )));
        }
        for _ in 1..n {
            self.run_once(&[], false)?;
        }
        self.run_once(&[], true)
    }

    pub fn profile(&self) -> Vec<ProfileEntry> {
        self.prog
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| ProfileEntry {
                node: s.name.clone(),
                op: s.node.op.name(),
                count: self.machine.counts[i],
                nanos: self.machine.nanos[i],
            })
            .collect()
    }

    pub fn reset_profile(&mut self) {
        self.machine.counts.fill(0);
        self.machine.nanos.fill(0);
    }

    pub fn profile_json(&self) -> String {
        serde_json::to_string_pretty(&self.profile()).expect("profile serializes")
    }

    pub fn profile_text(&self) -> String {
        let rows = self.profile();
        let w = rows.iter().map(|r| r.node.len()).max().unwrap_or(4).max(4);
        let mut s = format!("{:<w$}  {:>10}  {:>14}\n", "node", "count", "nanos");
        for r in rows {
            s.push_str(&format!("{:<w$}  {:>10}  {:>14}\n", r.node, r.count, r.nanos));
        }
        s
    }

    /// Invocation count of the step computing `v`, if it is scheduled.
    pub fn count_for(&self, v: &Var) -> Option<u64> {
        let (node, _) = v.owner()?;
        self.prog.steps.iter().position(|s| s.node.id() == node.id()).map(|i| self.machine.counts[i])
    }

    /// Total invocations of kernels that evaluate `op` elementwise, counting
    /// each occurrence inside fused composites.
    pub fn elementwise_launches(&self, op: crate::ops::ScalarOp) -> u64 {
        self.prog
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let per = match &s.node.op {
                    Op::Elemwise(o) if *o == op => 1,
                    Op::Composite(c) => c.count_op(op) as u64,
                    _ => 0,
                };
                per * self.machine.counts[i]
            })
            .sum()
    }
}

/// Compiles and runs `g` once without optimization. Convenient in tests.
pub fn eval_graph(g: &Graph, inputs: Vec<Tensor>) -> Result<Vec<Tensor>> {
    compile(g, Options::default().level(Level::None))?.call(inputs)
}
