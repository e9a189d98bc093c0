//! Storage planning for scan states.
//!
//! A state whose stacked output is only ever read through a few of its most
//! recent entries does not need its whole history. Such states get a
//! rotating buffer holding just those entries.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::Buffer;
use crate::error::Result;
use crate::graph::{apply, ApplyNode, Graph, NodeId, Var, VarId};
use crate::ops::Op;

/// Buffer choices for every scan in `g` that can use less than its full
/// history, keyed by node id.
pub fn scan_memory_plan(g: &Graph) -> HashMap<NodeId, Vec<Buffer>> {
    let roots: HashSet<VarId> = g.roots().iter().map(Var::id).collect();
    let nodes = g.nodes();
    let mut consumers: HashMap<VarId, Vec<&Arc<ApplyNode>>> = HashMap::new();
    for n in &nodes {
        for v in &n.inputs {
            consumers.entry(v.id()).or_default().push(n);
        }
    }
    let mut plan = HashMap::new();
    for n in &nodes {
        let Op::Scan(scan) = &n.op else { continue };
        let mut buffers = scan.buffers.clone();
        let mut changed = false;
        for (j, buf) in buffers.iter_mut().enumerate() {
            if *buf != Buffer::Full {
                continue;
            }
            let id = n.output_ids()[j];
            if roots.contains(&id) {
                continue;
            }
            let mut need = 1;
            let mut ok = true;
            for c in consumers.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                match c.op {
                    Op::Index(i) if !scan.go_backwards && i < 0 => need = need.max(i.unsigned_abs() as usize),
                    Op::Index(i) if scan.go_backwards && i >= 0 => need = need.max(i as usize + 1),
                    _ => ok = false,
                }
            }
            if ok {
                *buf = Buffer::Rotating(need);
                changed = true;
            }
        }
        if changed {
            plan.insert(n.id(), buffers);
        }
    }
    plan
}

/// Applies [`scan_memory_plan`] to `g`.
pub fn plan_graph(g: &Graph) -> Result<Graph> {
    let plan = scan_memory_plan(g);
    if plan.is_empty() {
        return Ok(g.clone());
    }
    crate::rewrite::transform(g, |node, inputs| match (&node.op, plan.get(&node.id())) {
        (Op::Scan(scan), Some(buffers)) => apply(Op::Scan(Arc::new(scan.with_buffers(buffers.clone()))), &inputs),
        _ => crate::graph::reapply(node, inputs),
    })
}
