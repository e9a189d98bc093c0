//! Symbolic variables, op applications and whole-function graphs.
//!
//! Variables and nodes are immutable and reference-counted. A [`Var`] that is
//! the output of an [`ApplyNode`] points at its producer, so a graph is fully
//! described by its outputs; [`Graph`] adds the input signature and the
//! shared-variable updates of a function.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Error, Result};
use crate::ops::Op;
use crate::tensor::Tensor;
use crate::types::TensorType;

pub type VarId = u64;
pub type NodeId = u64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Every variable or node created after this call has a larger id.
pub(crate) fn id_watermark() -> u64 {
    NEXT_ID.load(Ordering::Relaxed)
}

/// Persistent value of a shared variable. Clones refer to the same storage.
#[derive(Clone)]
pub struct SharedValue(Arc<Mutex<Tensor>>);

impl SharedValue {
    pub fn new(t: Tensor) -> Self {
        SharedValue(Arc::new(Mutex::new(t)))
    }

    pub fn get(&self) -> Tensor {
        self.lock().clone()
    }

    pub fn set(&self, t: Tensor) {
        *self.lock() = t;
    }

    pub fn lock(&self) -> MutexGuard<'_, Tensor> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl fmt::Debug for SharedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SharedValue({:?})", self.lock().shape())
    }
}

#[derive(Clone, Debug)]
pub enum VarKind {
    /// Formal parameter bound at call time.
    Input,
    Shared(SharedValue),
    Constant(Arc<Tensor>),
    Output { node: Arc<ApplyNode>, index: usize },
}

#[derive(Debug)]
pub struct VarData {
    id: VarId,
    ty: TensorType,
    kind: VarKind,
    name: Option<String>,
}

/// A symbolic value. Identity (equality, hashing) is by id.
#[derive(Clone)]
pub struct Var(Arc<VarData>);

impl Var {
    pub fn input(name: impl Into<String>, ty: TensorType) -> Var {
        Var(Arc::new(VarData { id: fresh_id(), ty, kind: VarKind::Input, name: Some(name.into()) }))
    }

    /// An unnamed formal input (used for inner loop bodies).
    pub fn placeholder(ty: TensorType) -> Var {
        Var(Arc::new(VarData { id: fresh_id(), ty, kind: VarKind::Input, name: None }))
    }

    /// Shared variable whose static type is the exact shape of `value`.
    pub fn shared(name: impl Into<String>, value: Tensor) -> Var {
        let ty = value.tensor_type();
        Var::shared_with_type(name, value, ty)
    }

    pub fn shared_with_type(name: impl Into<String>, value: Tensor, ty: TensorType) -> Var {
        Var(Arc::new(VarData {
            id: fresh_id(),
            ty,
            kind: VarKind::Shared(SharedValue::new(value)),
            name: Some(name.into()),
        }))
    }

    pub fn constant(value: Tensor) -> Var {
        let ty = value.tensor_type();
        Var(Arc::new(VarData { id: fresh_id(), ty, kind: VarKind::Constant(Arc::new(value)), name: None }))
    }

    pub fn scalar(v: f64) -> Var {
        Var::constant(Tensor::scalar(v))
    }

    fn output_of(node: &Arc<ApplyNode>, index: usize) -> Var {
        Var(Arc::new(VarData {
            id: node.output_ids[index],
            ty: node.output_types[index].clone(),
            kind: VarKind::Output { node: node.clone(), index },
            name: None,
        }))
    }

    pub fn id(&self) -> VarId {
        self.0.id
    }

    pub fn ty(&self) -> &TensorType {
        &self.0.ty
    }

    pub fn kind(&self) -> &VarKind {
        &self.0.kind
    }

    pub fn name(&self) -> Option<&str> {
        self.0.name.as_deref()
    }

    /// Name if any, otherwise `v<id>`.
    pub fn label(&self) -> String {
        match &self.0.name {
            Some(n) => n.clone(),
            None => format!("v{}", self.0.id),
        }
    }

    pub fn owner(&self) -> Option<(&Arc<ApplyNode>, usize)> {
        match &self.0.kind {
            VarKind::Output { node, index } => Some((node, *index)),
            _ => None,
        }
    }

    /// Op of the producing node, if any.
    pub fn owner_op(&self) -> Option<&Op> {
        self.owner().map(|(n, _)| &n.op)
    }

    pub fn is_input(&self) -> bool {
        matches!(self.0.kind, VarKind::Input)
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self.0.kind, VarKind::Output { .. })
    }

    pub fn shared_value(&self) -> Option<&SharedValue> {
        match &self.0.kind {
            VarKind::Shared(s) => Some(s),
            _ => None,
        }
    }

    pub fn constant_value(&self) -> Option<&Tensor> {
        match &self.0.kind {
            VarKind::Constant(t) => Some(t),
            _ => None,
        }
    }

    /// Value of a rank-0 constant.
    pub fn scalar_constant(&self) -> Option<f64> {
        self.constant_value().filter(|t| t.rank() == 0).map(|t| t.data()[0])
    }

    /// Whether this is a constant whose every element equals `v`.
    pub fn is_constant_fill(&self, v: f64) -> bool {
        self.constant_value().is_some_and(|t| !t.is_empty() && t.data().iter().all(|&x| x == v))
    }
}

impl PartialEq for Var {
    fn eq(&self, other: &Self) -> bool {
        self.0.id == other.0.id
    }
}

impl Eq for Var {}

impl Hash for Var {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.id.hash(state)
    }
}

impl fmt::Debug for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.kind {
            VarKind::Output { node, index } => {
                write!(f, "{}#{}[{}]: {}", node.op.name(), node.id, index, self.0.ty)
            }
            VarKind::Constant(t) if t.len() == 1 => write!(f, "const {}: {}", t.data()[0], self.0.ty),
            _ => write!(f, "{}: {}", self.label(), self.0.ty),
        }
    }
}

/// One application of an op to input variables.
#[derive(Debug)]
pub struct ApplyNode {
    id: NodeId,
    pub op: Op,
    pub inputs: Vec<Var>,
    output_types: Vec<TensorType>,
    output_ids: Vec<VarId>,
}

impl ApplyNode {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn output_types(&self) -> &[TensorType] {
        &self.output_types
    }

    pub fn output_ids(&self) -> &[VarId] {
        &self.output_ids
    }

    pub fn n_outputs(&self) -> usize {
        self.output_ids.len()
    }

    pub fn output(self: &Arc<Self>, index: usize) -> Var {
        Var::output_of(self, index)
    }

    pub fn outputs(self: &Arc<Self>) -> Vec<Var> {
        (0..self.output_ids.len()).map(|i| Var::output_of(self, i)).collect()
    }
}

/// Applies `op` to `inputs`, inferring output types. No evaluation happens.
pub fn apply(op: Op, inputs: &[Var]) -> Result<Vec<Var>> {
    let types: Vec<&TensorType> = inputs.iter().map(|v| v.ty()).collect();
    let output_types = op.infer(&types)?;
    let output_ids = output_types.iter().map(|_| fresh_id()).collect();
    let node = Arc::new(ApplyNode { id: fresh_id(), op, inputs: inputs.to_vec(), output_types, output_ids });
    Ok(node.outputs())
}

/// Single-output form of [`apply`].
pub fn apply1(op: Op, inputs: &[Var]) -> Result<Var> {
    let name = op.name();
    let mut outs = apply(op, inputs)?;
    if outs.len() != 1 {
        return Err(Error::ty(&name, None, format!("expected one output, op has {}", outs.len())));
    }
    Ok(outs.pop().unwrap())
}

/// Builds a node whose outputs reuse caller-chosen ids. Only meant for
/// constructing deliberately malformed graphs in tests of [`Graph::validate`].
#[doc(hidden)]
pub fn apply_with_output_ids(op: Op, inputs: &[Var], ids: &[VarId]) -> Result<Vec<Var>> {
    let types: Vec<&TensorType> = inputs.iter().map(|v| v.ty()).collect();
    let output_types = op.infer(&types)?;
    if ids.len() != output_types.len() {
        return Err(Error::Usage("output id count mismatch".into()));
    }
    let node =
        Arc::new(ApplyNode { id: fresh_id(), op, inputs: inputs.to_vec(), output_types, output_ids: ids.to_vec() });
    Ok(node.outputs())
}

/// Collects the nodes reachable from `roots`, without descending through
/// variables in `stop`. Order is unspecified.
pub fn reachable_nodes(roots: &[Var], stop: &HashSet<VarId>) -> Vec<Arc<ApplyNode>> {
    let mut seen: HashSet<NodeId> = HashSet::new();
    let mut out = Vec::new();
    let mut stack: Vec<Var> = roots.to_vec();
    while let Some(v) = stack.pop() {
        if stop.contains(&v.id()) {
            continue;
        }
        if let Some((node, _)) = v.owner() {
            if seen.insert(node.id) {
                out.push(node.clone());
                stack.extend(node.inputs.iter().cloned());
            }
        }
    }
    out
}

/// Orders `nodes` so every node follows the producers of its inputs.
/// Dependencies are resolved by variable id; ties go to the lower node id.
pub fn toposort_nodes(nodes: Vec<Arc<ApplyNode>>) -> Result<Vec<Arc<ApplyNode>>> {
    let mut producer: HashMap<VarId, usize> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        for &vid in &n.output_ids {
            producer.insert(vid, i);
        }
    }
    let mut indegree = vec![0usize; nodes.len()];
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        let mut deps: Vec<usize> = n.inputs.iter().filter_map(|v| producer.get(&v.id()).copied()).collect();
        deps.sort_unstable();
        deps.dedup();
        indegree[i] = deps.len();
        for d in deps {
            consumers[d].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<(NodeId, usize)>> = nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| indegree[*i] == 0)
        .map(|(i, n)| Reverse((n.id, i)))
        .collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &c in &consumers[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse((nodes[c].id, c)));
            }
        }
    }
    if order.len() != nodes.len() {
        return Err(Error::Invalid(vec!["cycle detected".into()]));
    }
    let mut slots: Vec<Option<Arc<ApplyNode>>> = nodes.into_iter().map(Some).collect();
    Ok(order.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

/// Toposort of everything needed to compute `roots`.
pub fn toposort_vars(roots: &[Var]) -> Result<Vec<Arc<ApplyNode>>> {
    toposort_nodes(reachable_nodes(roots, &HashSet::new()))
}

/// Rebuilds the subgraph computing `roots`, node by node in topological
/// order. `subs` pre-seeds the variable mapping (and cuts traversal there);
/// `rebuild_node` receives each original node with its mapped inputs and
/// returns the replacement outputs. Returns the final variable mapping.
pub fn rebuild<F>(roots: &[Var], subs: &HashMap<VarId, Var>, mut rebuild_node: F) -> Result<HashMap<VarId, Var>>
where
    F: FnMut(&Arc<ApplyNode>, Vec<Var>) -> Result<Vec<Var>>,
{
    let stop: HashSet<VarId> = subs.keys().copied().collect();
    let order = toposort_nodes(reachable_nodes(roots, &stop))?;
    let mut map = subs.clone();
    for node in order {
        let inputs: Vec<Var> = node.inputs.iter().map(|v| map.get(&v.id()).cloned().unwrap_or_else(|| v.clone())).collect();
        let outs = rebuild_node(&node, inputs)?;
        for (vid, new) in node.output_ids.iter().zip(outs) {
            map.insert(*vid, new);
        }
    }
    Ok(map)
}

/// Re-applies `node`'s op to `inputs`, reusing the node when nothing changed.
pub fn reapply(node: &Arc<ApplyNode>, inputs: Vec<Var>) -> Result<Vec<Var>> {
    if inputs.iter().zip(&node.inputs).all(|(a, b)| a == b) {
        Ok(node.outputs())
    } else {
        apply(node.op.clone(), &inputs)
    }
}

/// Maps `v` through a rebuild mapping.
pub fn mapped(map: &HashMap<VarId, Var>, v: &Var) -> Var {
    map.get(&v.id()).cloned().unwrap_or_else(|| v.clone())
}

/// Structural equality of two variables: same identity, equal scalar
/// constants, or outputs of equal ops applied to structurally equal inputs.
pub fn structurally_eq(a: &Var, b: &Var) -> bool {
    fn go(a: &Var, b: &Var, memo: &mut HashSet<(VarId, VarId)>) -> bool {
        if a == b || memo.contains(&(a.id(), b.id())) {
            return true;
        }
        let eq = match (a.kind(), b.kind()) {
            (VarKind::Constant(x), VarKind::Constant(y)) => {
                x.rank() == 0 && y.rank() == 0 && x.dtype() == y.dtype() && x.data()[0].to_bits() == y.data()[0].to_bits()
            }
            (VarKind::Output { node: n1, index: i1 }, VarKind::Output { node: n2, index: i2 }) => {
                i1 == i2
                    && n1.op == n2.op
                    && n1.inputs.len() == n2.inputs.len()
                    && n1.inputs.iter().zip(&n2.inputs).all(|(x, y)| go(x, y, memo))
            }
            _ => false,
        };
        if eq {
            memo.insert((a.id(), b.id()));
        }
        eq
    }
    go(a, b, &mut HashSet::new())
}

/// A closed function graph: formal inputs, outputs and shared-variable updates.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub inputs: Vec<Var>,
    pub outputs: Vec<Var>,
    pub updates: Vec<(Var, Var)>,
}

impl Graph {
    pub fn new(inputs: Vec<Var>, outputs: Vec<Var>) -> Graph {
        Graph { inputs, outputs, updates: Vec::new() }
    }

    pub fn with_updates(mut self, updates: Vec<(Var, Var)>) -> Graph {
        self.updates = updates;
        self
    }

    /// Outputs followed by update expressions.
    pub fn roots(&self) -> Vec<Var> {
        let mut r = self.outputs.clone();
        r.extend(self.updates.iter().map(|(_, e)| e.clone()));
        r
    }

    pub fn nodes(&self) -> Vec<Arc<ApplyNode>> {
        reachable_nodes(&self.roots(), &HashSet::new())
    }

    pub fn node_count(&self) -> usize {
        self.nodes().len()
    }

    pub fn toposort(&self) -> Result<Vec<Arc<ApplyNode>>> {
        toposort_nodes(self.nodes())
    }

    /// Every leaf variable the graph depends on, in first-seen order.
    pub fn leaves(&self) -> Vec<Var> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for r in self.roots() {
            if r.is_leaf() && seen.insert(r.id()) {
                out.push(r.clone());
            }
        }
        if let Ok(order) = self.toposort() {
            for n in order {
                for v in &n.inputs {
                    if v.is_leaf() && seen.insert(v.id()) {
                        out.push(v.clone());
                    }
                }
            }
        }
        out
    }

    pub fn shared_vars(&self) -> Vec<Var> {
        let mut vs: Vec<Var> = self.leaves().into_iter().filter(|v| v.shared_value().is_some()).collect();
        for (t, _) in &self.updates {
            if !vs.contains(t) {
                vs.push(t.clone());
            }
        }
        vs
    }

    /// Checks acyclicity, type consistency and update pairing. Returns every
    /// violation found.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut violations = Vec::new();
        let nodes = self.nodes();

        let mut producers: HashMap<VarId, NodeId> = HashMap::new();
        for n in &nodes {
            for &vid in &n.output_ids {
                if let Some(prev) = producers.insert(vid, n.id) {
                    if prev != n.id {
                        violations.push(format!("variable v{vid} has more than one producer"));
                    }
                }
            }
        }
        if toposort_nodes(nodes.clone()).is_err() {
            violations.push("cycle".to_string());
        }

        for n in &nodes {
            let types: Vec<&TensorType> = n.inputs.iter().map(|v| v.ty()).collect();
            match n.op.infer(&types) {
                Ok(inferred) if inferred == n.output_types => {}
                Ok(inferred) => violations.push(format!(
                    "node {}#{}: output types {:?} differ from inferred {:?}",
                    n.op.name(),
                    n.id,
                    n.output_types,
                    inferred
                )),
                Err(e) => violations.push(format!("node {}#{}: {e}", n.op.name(), n.id)),
            }
        }

        let declared: HashSet<VarId> = self.inputs.iter().map(|v| v.id()).collect();
        for v in &self.inputs {
            if !v.is_input() {
                violations.push(format!("declared input {} is not an input variable", v.label()));
            }
        }
        let check_leaf = |v: &Var, violations: &mut Vec<String>| {
            if v.is_input() && !declared.contains(&v.id()) && !producers.contains_key(&v.id()) {
                violations.push(format!("missing input: {} is used but not declared", v.label()));
            }
        };
        for r in self.roots() {
            check_leaf(&r, &mut violations);
        }
        for n in &nodes {
            for v in &n.inputs {
                check_leaf(v, &mut violations);
            }
        }

        let mut targets = HashSet::new();
        for (target, expr) in &self.updates {
            if target.shared_value().is_none() {
                violations.push(format!("update target {} is not a shared variable", target.label()));
            }
            if target.ty() != expr.ty() {
                violations.push(format!(
                    "update type mismatch: {} is {} but its update is {}",
                    target.label(),
                    target.ty(),
                    expr.ty()
                ));
            }
            if !targets.insert(target.id()) {
                violations.push(format!("duplicate update for {}", target.label()));
            }
        }

        violations.dedup();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Copy of the graph with `subs` applied everywhere. Every reachable node
    /// is rebuilt; the original is untouched.
    pub fn clone_with_substitutions(&self, subs: &HashMap<Var, Var>) -> Result<Graph> {
        for (from, to) in subs {
            if from.ty() != to.ty() {
                return Err(Error::ty(
                    "clone",
                    None,
                    format!("substitution of {} ({}) by {} ({})", from.label(), from.ty(), to.label(), to.ty()),
                ));
            }
        }
        let seed: HashMap<VarId, Var> = subs.iter().map(|(k, v)| (k.id(), v.clone())).collect();
        let map = rebuild(&self.roots(), &seed, |node, inputs| apply(node.op.clone(), &inputs))?;
        Ok(Graph {
            inputs: self.inputs.iter().map(|v| mapped(&map, v)).collect(),
            outputs: self.outputs.iter().map(|v| mapped(&map, v)).collect(),
            updates: self.updates.iter().map(|(t, e)| (t.clone(), mapped(&map, e))).collect(),
        })
    }

    /// Structural equality: identical inputs and update targets, structurally
    /// equal outputs and update expressions.
    pub fn structurally_eq(&self, other: &Graph) -> bool {
        self.inputs == other.inputs
            && self.outputs.len() == other.outputs.len()
            && self.outputs.iter().zip(&other.outputs).all(|(a, b)| structurally_eq(a, b))
            && self.updates.len() == other.updates.len()
            && self
                .updates
                .iter()
                .zip(&other.updates)
                .all(|((t1, e1), (t2, e2))| t1 == t2 && structurally_eq(e1, e2))
    }

    /// GraphViz rendering. Apply nodes are boxes labelled with op name and
    /// output type; leaves are ellipses.
    pub fn export_dot(&self) -> String {
        let mut s = String::from("digraph G {\n  rankdir=LR;\n");
        s.push_str(&self.dot_statements("out"));
        s.push_str("}\n");
        s
    }

    /// The node and edge statements of [`Graph::export_dot`]. Output markers
    /// are named `{tag}0`, `{tag}1`, ... so several graphs can share one file.
    pub fn dot_statements(&self, tag: &str) -> String {
        let mut s = String::new();
        let order = self.toposort().unwrap_or_else(|_| self.nodes());
        let mut leaves_done = HashSet::new();
        let mut leaf = |s: &mut String, v: &Var| {
            if v.is_leaf() && leaves_done.insert(v.id()) {
                let what = match v.kind() {
                    VarKind::Input => "input",
                    VarKind::Shared(_) => "shared",
                    VarKind::Constant(_) => "const",
                    VarKind::Output { .. } => unreachable!(),
                };
                let label = match v.scalar_constant() {
                    Some(c) => format!("{c}"),
                    None => v.label(),
                };
                let _ = writeln!(s, "  v{} [shape=ellipse, label=\"{} {}: {}\"];", v.id(), what, label, v.ty());
            }
        };
        for n in &order {
            for v in &n.inputs {
                leaf(&mut s, v);
            }
        }
        for r in self.roots() {
            leaf(&mut s, &r);
        }
        for n in &order {
            let types: Vec<String> = n.output_types.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(s, "  n{} [shape=box, label=\"{}\\n{}\"];", n.id, n.op.name(), types.join(", "));
            for v in &n.inputs {
                let src = match v.owner() {
                    Some((p, _)) => format!("n{}", p.id),
                    None => format!("v{}", v.id()),
                };
                let _ = writeln!(s, "  {} -> n{};", src, n.id);
            }
        }
        for (i, o) in self.outputs.iter().enumerate() {
            let src = match o.owner() {
                Some((p, _)) => format!("n{}", p.id),
                None => format!("v{}", o.id()),
            };
            let _ = writeln!(s, "  {tag}{i} [shape=plaintext, label=\"out{i}\"];\n  {src} -> {tag}{i};");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder as b;
    use crate::types::{DType, Dim};

    fn vec_in(name: &str) -> Var {
        Var::input(name, TensorType::vector(DType::F64, Dim::Unknown))
    }

    #[test]
    fn apply_add_types() {
        let x = vec_in("x");
        let y = vec_in("y");
        let z = b::add(&x, &y).unwrap();
        assert_eq!(z.ty(), &TensorType::vector(DType::F64, Dim::Unknown));
        assert_eq!(z.owner().unwrap().0.inputs, vec![x, y]);
    }

    #[test]
    fn dot_inner_mismatch() {
        let a = Var::input("A", TensorType::of_shape(DType::F64, &[2, 3]));
        let c = Var::input("B", TensorType::of_shape(DType::F64, &[4, 2]));
        let err = b::dot(&a, &c).unwrap_err();
        assert!(err.to_string().contains("inner dimension mismatch"), "{err}");
    }

    #[test]
    fn sum_axis_type() {
        let m = Var::input("M", TensorType::of_shape(DType::F64, &[3, 4]));
        let s = b::sum_axis(&m, 0).unwrap();
        assert_eq!(s.ty(), &TensorType::of_shape(DType::F64, &[4]));
    }

    #[test]
    fn toposort_diamond() {
        let x = vec_in("x");
        let a = b::exp(&x).unwrap();
        let l = b::neg(&a).unwrap();
        let r = b::tanh(&a).unwrap();
        let d = b::add(&l, &r).unwrap();
        let g = Graph::new(vec![x], vec![d.clone()]);
        let order = g.toposort().unwrap();
        assert_eq!(order.len(), 4);
        assert_eq!(order[0].id(), a.owner().unwrap().0.id());
        assert_eq!(order[3].id(), d.owner().unwrap().0.id());
    }

    #[test]
    fn single_node_toposort() {
        let x = vec_in("x");
        let y = b::exp(&x).unwrap();
        let g = Graph::new(vec![x], vec![y.clone()]);
        let order = g.toposort().unwrap();
        assert_eq!(order.len(), 1);
        assert_eq!(order[0].id(), y.owner().unwrap().0.id());
    }

    #[test]
    fn validate_update_mismatch() {
        let w = Var::shared("W", Tensor::zeros(DType::F64, &[2, 2]));
        let v = Var::input("v", TensorType::of_shape(DType::F64, &[2]));
        let g = Graph::new(vec![v.clone()], vec![]).with_updates(vec![(w, v)]);
        let errs = g.validate().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("update type mismatch")), "{errs:?}");
    }

    #[test]
    fn validate_cycle() {
        let x = vec_in("x");
        let a = b::exp(&x).unwrap();
        // A node producing a variable with x's id closes a loop x -> exp -> tanh -> x.
        let back = apply_with_output_ids(Op::Elemwise(crate::ops::ScalarOp::Tanh), &[a], &[x.id()]).unwrap();
        let g = Graph::new(vec![x], back);
        let errs = g.validate().unwrap_err();
        assert!(errs.iter().any(|e| e == "cycle"), "{errs:?}");
        assert!(g.toposort().is_err());
    }

    #[test]
    fn validate_reports_all() {
        let w = Var::shared("W", Tensor::zeros(DType::F64, &[2, 2]));
        let stray = vec_in("stray");
        let v = Var::input("v", TensorType::of_shape(DType::F64, &[2]));
        let g = Graph::new(vec![v.clone()], vec![stray]).with_updates(vec![(w, v)]);
        let errs = g.validate().unwrap_err();
        assert_eq!(errs.len(), 2, "{errs:?}");
    }

    #[test]
    fn clone_identity_is_structurally_equal() {
        let x = vec_in("x");
        let y = vec_in("y");
        let z = b::mul(&b::add(&x, &y).unwrap(), &x).unwrap();
        let g = Graph::new(vec![x, y], vec![z]);
        let c = g.clone_with_substitutions(&HashMap::new()).unwrap();
        assert!(g.structurally_eq(&c));
        assert_ne!(g.outputs[0], c.outputs[0]);
        assert_eq!(g.node_count(), c.node_count());
    }

    #[test]
    fn clone_rejects_type_mismatch() {
        let x = vec_in("x");
        let s = Var::scalar(0.0);
        let g = Graph::new(vec![x.clone()], vec![b::exp(&x).unwrap()]);
        let subs = HashMap::from([(x, s)]);
        assert!(g.clone_with_substitutions(&subs).is_err());
    }

    #[test]
    fn dot_export() {
        let x = vec_in("x");
        let y = vec_in("y");
        let g = Graph::new(vec![x.clone(), y.clone()], vec![b::add(&x, &y).unwrap()]);
        let dot = g.export_dot();
        assert_eq!(dot.matches("shape=box").count(), 1);
        assert!(dot.contains("label=\"add\\n"));
        assert_eq!(dot.matches("shape=ellipse").count(), 2);
        let empty = Graph::default().export_dot();
        assert!(!empty.contains("shape="));
    }
}

fn operand(v: &Var) -> String {
    match v.kind() {
        VarKind::Constant(t) if t.len() == 1 => format!("{}", t.data()[0]),
        VarKind::Constant(t) => format!("const{:?}", t.shape()),
        _ => v.label(),
    }
}

/// One line per node in schedule order, then the outputs and updates.
impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ins: Vec<String> = self.inputs.iter().map(|v| format!("{}: {}", v.label(), v.ty())).collect();
        writeln!(f, "inputs {}", ins.join(", "))?;
        let order = self.toposort().map_err(|_| fmt::Error)?;
        for n in order {
            let outs: Vec<String> = n.outputs().iter().map(|v| format!("{}: {}", v.label(), v.ty())).collect();
            let args: Vec<String> = n.inputs.iter().map(operand).collect();
            writeln!(f, "  {} = {}({})", outs.join(", "), n.op.name(), args.join(", "))?;
        }
        let outs: Vec<String> = self.outputs.iter().map(operand).collect();
        write!(f, "outputs {}", outs.join(", "))?;
        for (t, e) in &self.updates {
            write!(f, "\nupdate {} <- {}", t.label(), operand(e))?;
        }
        Ok(())
    }
}
