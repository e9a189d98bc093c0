//! Randomized check that a rewritten graph computes what the original did.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{rel_diff, Tensor};
use crate::types::{DType, Dim};
use crate::vm::eval_graph;

#[derive(Debug, Clone)]
pub struct SemanticsConfig {
    pub trials: usize,
    /// Largest accepted relative deviation.
    pub tol: f64,
    pub seed: u64,
    /// Denominator floor for relative deviations.
    pub floor: f64,
}

impl Default for SemanticsConfig {
    fn default() -> Self {
        SemanticsConfig { trials: 10, tol: 1e-12, seed: 0, floor: 1e-8 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SemanticsReport {
    pub trials: usize,
    pub max_rel_dev: f64,
    /// Largest deviation per compared output (outputs, then updates).
    pub per_output: Vec<f64>,
    /// Descriptions of trials that exceeded the tolerance or where only one
    /// side failed to evaluate.
    pub failures: Vec<String>,
}

impl SemanticsReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Random values for `inputs`. Unknown extents share one random size per
/// call; floats are uniform in [-2, 2], integers in [0, 2].
pub fn random_inputs(inputs: &[Var], rng: &mut impl Rng) -> Vec<Tensor> {
    let extent = rng.gen_range(1..=4);
    inputs
        .iter()
        .map(|v| {
            let ty = v.ty();
            let shape: Vec<usize> = ty
                .dims
                .iter()
                .map(|d| match d {
                    Dim::Known(n) => *n,
                    Dim::Unknown => extent,
                })
                .collect();
            let n: usize = shape.iter().product();
            let data: Vec<f64> = match ty.dtype {
                DType::I64 => (0..n).map(|_| rng.gen_range(0..=2) as f64).collect(),
                _ => (0..n).map(|_| rng.gen_range(-2.0..=2.0)).collect(),
            };
            Tensor::new(ty.dtype, shape, data).expect("shape and data agree")
        })
        .collect()
}

fn observable(g: &Graph) -> Graph {
    let mut outs = g.outputs.clone();
    outs.extend(g.updates.iter().map(|(_, e)| e.clone()));
    Graph::new(g.inputs.clone(), outs)
}

/// Compares `before` and `after` on `trials` random inputs.
pub fn check_semantics(before: &Graph, after: &Graph, trials: usize) -> Result<SemanticsReport> {
    check_semantics_with(before, after, &SemanticsConfig { trials, ..SemanticsConfig::default() })
}

pub fn check_semantics_with(before: &Graph, after: &Graph, config: &SemanticsConfig) -> Result<SemanticsReport> {
    if before.inputs.len() != after.inputs.len() || before.roots().len() != after.roots().len() {
        return Err(Error::Usage("graphs have different signatures".into()));
    }
    let (a, c) = (observable(before), observable(after));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = SemanticsReport { trials: config.trials, per_output: vec![0.0; a.outputs.len()], ..Default::default() };
    for trial in 0..config.trials {
        let ins = random_inputs(&a.inputs, &mut rng);
        match (eval_graph(&a, ins.clone()), eval_graph(&c, ins)) {
            (Ok(x), Ok(y)) => {
                for (k, (p, q)) in x.iter().zip(&y).enumerate() {
                    let dev = if p.shape() != q.shape() {
                        f64::INFINITY
                    } else {
                        p.data().iter().zip(q.data()).map(|(&u, &v)| rel_diff(u, v, config.floor)).fold(0.0, f64::max)
                    };
                    report.per_output[k] = report.per_output[k].max(dev);
                    report.max_rel_dev = report.max_rel_dev.max(dev);
                    if dev > config.tol {
                        report.failures.push(format!("trial {trial}, output {k}: relative deviation {dev:e}"));
                    }
                }
            }
            (Err(_), Err(_)) => {}
            (Err(e), Ok(_)) => report.failures.push(format!("trial {trial}: original failed: {e}")),
            (Ok(_), Err(e)) => report.failures.push(format!("trial {trial}: rewritten failed: {e}")),
        }
    }
    Ok(report)
}
