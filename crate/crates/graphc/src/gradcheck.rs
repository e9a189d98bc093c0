//! Finite-difference checks of reverse-mode gradients.

use graphc_core::autodiff::grad;
use graphc_core::vm::{self, Options};
use graphc_core::{Error, Graph, Result, Tensor, Var};
use serde::Serialize;

/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-8;

/// `|a - b| / max(|a|, |b|, FLOOR)`; infinite when either side is NaN.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let e = (a - b).abs() / a.abs().max(b.abs()).max(FLOOR);
    if e.is_nan() {
        f64::INFINITY
    } else {
        e
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradEntry {
    pub var: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub entries: Vec<GradEntry>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }

    pub fn worst(&self) -> Option<&GradEntry> {
        self.entries.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// What to perturb: a formal input (by position) or a shared variable.
enum Target {
    Input(usize),
    Shared(Var),
}

/// Entries of a tensor with `n` elements to check: all of them, or `limit`
/// evenly spaced ones.
fn picks(n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < n => (0..k).map(|i| i * n / k).collect(),
        _ => (0..n).collect(),
    }
}

/// Checks the gradient of the first output of `g` (which must be a float
/// scalar) with respect to every float input and every float shared
/// variable it depends on, by central differences with step `h`.
pub fn grad_check(g: &Graph, inputs: &[Tensor], h: f64, tol: f64, limit: Option<usize>) -> Result<GradCheck> {
    let cost = g.outputs.first().ok_or_else(|| Error::Usage("the function has no outputs".into()))?;
    if !cost.ty().is_scalar() || !cost.ty().dtype.is_float() {
        return Err(Error::Usage(format!("the first output must be a float scalar, not {}", cost.ty())));
    }
    let cost_graph = Graph::new(g.inputs.clone(), vec![cost.clone()]);
    let mut wrt = Vec::new();
    let mut targets = Vec::new();
    for (i, v) in g.inputs.iter().enumerate() {
        if v.ty().dtype.is_float() {
            wrt.push(v.clone());
            targets.push(Target::Input(i));
        }
    }
    for v in cost_graph.shared_vars() {
        if v.ty().dtype.is_float() {
            wrt.push(v.clone());
            targets.push(Target::Shared(v));
        }
    }
    let grads = grad(cost, &wrt)?;
    let mut gf = vm::compile(&Graph::new(g.inputs.clone(), grads), Options::default())?;
    let analytic = gf.call(inputs.to_vec())?;
    let mut cf = vm::compile(&cost_graph, Options::default())?;

    let mut entries = Vec::new();
    for ((target, v), a) in targets.iter().zip(&wrt).zip(&analytic) {
        let mut eval = |delta: f64, k: usize| -> Result<f64> {
            match target {
                Target::Input(i) => {
                    let mut xs = inputs.to_vec();
                    xs[*i].data_mut()[k] += delta;
                    Ok(cf.call(xs)?[0].data()[0])
                }
                Target::Shared(s) => {
                    let sv = s.shared_value().unwrap();
                    let orig = sv.get();
                    let mut t = orig.clone();
                    t.data_mut()[k] += delta;
                    sv.set(t);
                    let r = cf.call(inputs.to_vec());
                    sv.set(orig);
                    Ok(r?[0].data()[0])
                }
            }
        };
        for k in picks(a.data().len(), limit) {
            let numeric = (eval(h, k)? - eval(-h, k)?) / (2.0 * h);
            let an = a.data()[k];
            entries.push(GradEntry { var: v.label(), index: k, analytic: an, numeric, rel_err: rel_err(an, numeric) });
        }
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradCheck { entries, max_rel_err, tol })
}
