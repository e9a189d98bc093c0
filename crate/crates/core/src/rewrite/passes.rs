//! Whole-graph passes: common-subexpression elimination and elementwise fusion.

use std::collections::HashMap;
use std::sync::Arc;

use super::transform;
use crate::error::Result;
use crate::graph::{apply, reapply, Graph, Var, VarId};
use crate::ops::{Composite, Instr, Op, Operand};
use crate::types::DType;

/// Merges structurally identical nodes. Scalar constants compare by value,
/// other constants by identity. Returns the number of nodes merged.
pub fn cse(g: &Graph) -> Result<(Graph, usize)> {
    let mut table: HashMap<(Op, Vec<VarId>), Vec<Var>> = HashMap::new();
    let mut consts: HashMap<(DType, u64), Var> = HashMap::new();
    let mut merged = 0;
    let out = transform(g, |node, inputs| {
        let inputs: Vec<Var> = inputs
            .into_iter()
            .map(|v| match v.scalar_constant() {
                Some(c) => consts.entry((v.ty().dtype, c.to_bits())).or_insert(v).clone(),
                None => v,
            })
            .collect();
        let key = (node.op.clone(), inputs.iter().map(Var::id).collect::<Vec<_>>());
        if let Some(outs) = table.get(&key) {
            merged += 1;
            return Ok(outs.clone());
        }
        let outs = reapply(node, inputs)?;
        table.insert(key, outs.clone());
        Ok(outs)
    })?;
    Ok((out, merged))
}

fn as_composite(op: &Op) -> Option<Composite> {
    match op {
        Op::Elemwise(s) => Some(Composite {
            n_inputs: s.arity(),
            instrs: vec![Instr { op: *s, args: (0..s.arity()).map(Operand::Input).collect() }],
        }),
        Op::Composite(c) => Some((**c).clone()),
        _ => None,
    }
}

/// Collects composite inputs, deduplicated by identity; scalar constants
/// become inline operands.
struct Inputs {
    vars: Vec<Var>,
}

impl Inputs {
    fn operand(&mut self, v: &Var) -> Operand {
        if let Some(c) = v.scalar_constant() {
            return Operand::Const(c.to_bits());
        }
        match self.vars.iter().position(|x| x == v) {
            Some(i) => Operand::Input(i),
            None => {
                self.vars.push(v.clone());
                Operand::Input(self.vars.len() - 1)
            }
        }
    }
}

/// Appends `c`'s instructions with operands remapped; returns the result.
fn splice(c: &Composite, args: &[Operand], instrs: &mut Vec<Instr>) -> Operand {
    let base = instrs.len();
    for ins in &c.instrs {
        let remapped = ins
            .args
            .iter()
            .map(|a| match *a {
                Operand::Input(i) => args[i],
                Operand::Reg(r) => Operand::Reg(base + r),
                k @ Operand::Const(_) => k,
            })
            .collect();
        instrs.push(Instr { op: ins.op, args: remapped });
    }
    Operand::Reg(instrs.len() - 1)
}

fn fusable_dtype(d: DType) -> bool {
    d == DType::F64
}

/// Collapses chains of elementwise nodes into composites. A producer is
/// absorbed when its only consumer is the elementwise node, it is not a
/// graph output, and its output has the consumer's static dims. Returns
/// the number of producers absorbed.
pub fn fuse_elementwise(g: &Graph) -> Result<(Graph, usize)> {
    let mut uses: HashMap<VarId, usize> = HashMap::new();
    for n in g.nodes() {
        let mut ids: Vec<VarId> = n.inputs.iter().map(Var::id).collect();
        ids.sort_unstable();
        ids.dedup();
        for id in ids {
            *uses.entry(id).or_default() += 1;
        }
    }
    for r in g.roots() {
        *uses.entry(r.id()).or_default() += 2;
    }

    let mut fused = 0;
    let out = transform(g, |node, inputs| {
        let Some(own) = as_composite(&node.op) else { return reapply(node, inputs) };
        let out_ty = &node.output_types()[0];
        if !fusable_dtype(out_ty.dtype) {
            return reapply(node, inputs);
        }
        let absorb: Vec<Option<Composite>> = node
            .inputs
            .iter()
            .zip(&inputs)
            .map(|(orig, new)| {
                if uses.get(&orig.id()).copied().unwrap_or(0) != 1 {
                    return None;
                }
                let (p, _) = new.owner()?;
                // Constant-only producers are left for folding.
                if p.inputs.iter().all(|v| v.constant_value().is_some()) {
                    return None;
                }
                let c = as_composite(&p.op)?;
                (new.ty().dtype == out_ty.dtype && new.ty().dims == out_ty.dims).then_some(c)
            })
            .collect();
        if absorb.iter().all(Option::is_none) {
            return reapply(node, inputs);
        }

        let mut ins = Inputs { vars: Vec::new() };
        let mut instrs = Vec::new();
        let mut args = Vec::with_capacity(inputs.len());
        let mut count = 0;
        let mut spliced: HashMap<VarId, Operand> = HashMap::new();
        for (v, pc) in inputs.iter().zip(&absorb) {
            match pc {
                Some(_) if spliced.contains_key(&v.id()) => args.push(spliced[&v.id()]),
                Some(pc) => {
                    let p = v.owner().unwrap().0.clone();
                    let pargs: Vec<Operand> = p.inputs.iter().map(|x| ins.operand(x)).collect();
                    let r = splice(pc, &pargs, &mut instrs);
                    spliced.insert(v.id(), r);
                    args.push(r);
                    count += 1;
                }
                None => args.push(ins.operand(v)),
            }
        }
        splice(&own, &args, &mut instrs);
        if ins.vars.is_empty() {
            return reapply(node, inputs);
        }
        let comp = Composite { n_inputs: ins.vars.len(), instrs };
        let outs = apply(Op::Composite(Arc::new(comp)), &ins.vars)?;
        if outs[0].ty().dtype != out_ty.dtype || outs[0].ty().rank() != out_ty.rank() {
            return reapply(node, inputs);
        }
        fused += count;
        Ok(outs)
    })?;
    Ok((out, fused))
}
