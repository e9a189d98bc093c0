//! Whole-graph differentiation.
//!
//! [`lop`] sweeps the graph in reverse topological order seeded with a
//! covector; [`grad`] is the scalar special case. [`rop`] sweeps forward
//! carrying perturbations. All results are new symbolic graphs.

use std::collections::{HashMap, HashSet};

use crate::builder as b;
use crate::error::{Error, Result};
use crate::graph::{reachable_nodes, toposort_nodes, Var, VarId};
use crate::ops::grad::grad_rule;
use crate::ops::rop::rop_rule;
use crate::types::DType;

fn check_wrt(wrt: &[Var]) -> Result<()> {
    for w in wrt {
        if w.ty().dtype == DType::I64 {
            return Err(Error::IntegerWrt(w.label()));
        }
    }
    Ok(())
}

fn sum_all(parts: &[Var]) -> Result<Option<Var>> {
    let mut it = parts.iter();
    let Some(first) = it.next() else { return Ok(None) };
    let mut acc = first.clone();
    for p in it {
        acc = b::add(&acc, p)?;
    }
    Ok(Some(acc))
}

/// Gradient of a scalar `cost` with respect to each of `wrt`. Variables the
/// cost does not depend on get zeros.
pub fn grad(cost: &Var, wrt: &[Var]) -> Result<Vec<Var>> {
    if !cost.ty().is_scalar() {
        return Err(Error::NonScalarCost(cost.ty().rank()));
    }
    lop(&[cost.clone()], wrt, &[b::const_like(cost, 1.0)])
}

/// Vector-Jacobian product `ηᵀ ∂f/∂θ` for each `θ` in `wrt`.
pub fn lop(f: &[Var], wrt: &[Var], eta: &[Var]) -> Result<Vec<Var>> {
    check_wrt(wrt)?;
    if f.len() != eta.len() {
        return Err(Error::Diff(format!("{} outputs but {} covectors", f.len(), eta.len())));
    }
    for (fj, ej) in f.iter().zip(eta) {
        if fj.ty().rank() != ej.ty().rank() {
            return Err(Error::Diff(format!("covector type {} does not match output type {}", ej.ty(), fj.ty())));
        }
    }
    let stop: HashSet<VarId> = wrt.iter().map(|w| w.id()).collect();
    let order = toposort_nodes(reachable_nodes(f, &stop))?;

    let mut depends: HashSet<VarId> = stop.clone();
    for node in &order {
        if node.inputs.iter().any(|v| depends.contains(&v.id())) {
            depends.extend(node.output_ids().iter().copied());
        }
    }

    let mut contribs: HashMap<VarId, Vec<Var>> = HashMap::new();
    for (fj, ej) in f.iter().zip(eta) {
        if depends.contains(&fj.id()) {
            contribs.entry(fj.id()).or_default().push(ej.clone());
        }
    }

    let endpoint = || wrt.iter().map(|w| w.label()).collect::<Vec<_>>().join(", ");
    for node in order.iter().rev() {
        if !node.output_ids().iter().any(|id| depends.contains(id)) {
            continue;
        }
        let outs_g: Vec<Option<Var>> = node
            .output_ids()
            .iter()
            .map(|id| contribs.remove(id).map(|v| sum_all(&v)).transpose().map(Option::flatten))
            .collect::<Result<_>>()?;
        if outs_g.iter().all(|g| g.is_none()) {
            continue;
        }
        let in_g = grad_rule(node, &outs_g).map_err(|e| match e {
            Error::NonDifferentiable { op, .. } => Error::NonDifferentiable { op, var: endpoint() },
            other => other,
        })?;
        for (v, g) in node.inputs.iter().zip(in_g) {
            if let Some(g) = g {
                if depends.contains(&v.id()) && v.ty().dtype.is_float() {
                    contribs.entry(v.id()).or_default().push(g);
                }
            }
        }
    }

    wrt.iter()
        .map(|w| match contribs.get(&w.id()) {
            Some(parts) if !parts.is_empty() => Ok(sum_all(parts)?.unwrap()),
            _ => b::zeros_of(w),
        })
        .collect()
}

/// Jacobian-vector product `∂f/∂θ · γ` for each output in `f`.
pub fn rop(f: &[Var], wrt: &[Var], gamma: &[Var]) -> Result<Vec<Var>> {
    if wrt.len() != gamma.len() {
        return Err(Error::Diff(format!("{} parameters but {} directions", wrt.len(), gamma.len())));
    }
    for (w, g) in wrt.iter().zip(gamma) {
        if w.ty().rank() != g.ty().rank() {
            return Err(Error::Diff(format!("direction type {} does not match parameter type {}", g.ty(), w.ty())));
        }
    }
    let stop: HashSet<VarId> = wrt.iter().map(|w| w.id()).collect();
    let order = toposort_nodes(reachable_nodes(f, &stop))?;
    let mut perts: HashMap<VarId, Var> = wrt.iter().zip(gamma).map(|(w, g)| (w.id(), g.clone())).collect();
    for node in &order {
        let ins: Vec<Option<Var>> = node.inputs.iter().map(|v| perts.get(&v.id()).cloned()).collect();
        if ins.iter().all(|p| p.is_none()) {
            continue;
        }
        let outs = rop_rule(node, &ins)?;
        for (id, p) in node.output_ids().iter().zip(outs) {
            if let Some(p) = p {
                perts.insert(*id, p);
            }
        }
    }
    f.iter()
        .map(|fj| match perts.get(&fj.id()) {
            Some(p) => Ok(p.clone()),
            None => b::zeros_of(fj),
        })
        .collect()
}

/// Gauss-Newton vector product `Jᵀ(Jγ)` composed as an L-op of an R-op.
pub fn gauss_newton_vector_product(f: &[Var], theta: &[Var], gamma: &[Var]) -> Result<Vec<Var>> {
    let jv = rop(f, theta, gamma)?;
    lop(f, theta, &jv)
}
