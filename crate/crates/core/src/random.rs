//! Seeded random expression graphs for property tests and fuzzing.
//!
//! Graphs are built over three float inputs: a matrix of shape `(m, n)`, a
//! vector of length `n` and a scalar. Every op keeps values in a moderate
//! range and away from domain edges (logs see positive arguments, divisors
//! are bounded away from zero), so the graphs are smooth almost everywhere.

use rand::Rng;

use crate::builder as b;
use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::scan::{Scan, Step};
use crate::types::{DType, Dim, TensorType};

#[derive(Debug, Clone)]
pub struct RandomGraphConfig {
    /// Number of ops to add to the pool.
    pub n_ops: usize,
    /// Allow scan nodes.
    pub scans: bool,
    /// Allow conditionals.
    pub branches: bool,
    /// Leave the row count unknown in the input types.
    pub unknown_rows: bool,
    /// Number of graph outputs.
    pub n_outputs: usize,
}

impl Default for RandomGraphConfig {
    fn default() -> Self {
        RandomGraphConfig { n_ops: 10, scans: true, branches: true, unknown_rows: false, n_outputs: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Scalar,
    /// Length `n`.
    Row,
    /// Length `m`.
    Col,
    Mat,
}

struct Pool {
    vars: Vec<(Var, Kind)>,
}

impl Pool {
    fn pick(&self, rng: &mut impl Rng) -> (Var, Kind) {
        // Favour recent values so graphs grow deep as well as wide.
        let n = self.vars.len();
        let i = if rng.gen_bool(0.6) { n - 1 - rng.gen_range(0..n.min(3)) } else { rng.gen_range(0..n) };
        self.vars[i].clone()
    }

    fn pick_kind(&self, rng: &mut impl Rng, kind: Kind) -> Option<Var> {
        let c: Vec<&Var> = self.vars.iter().filter(|(_, k)| *k == kind).map(|(v, _)| v).collect();
        (!c.is_empty()).then(|| c[rng.gen_range(0..c.len())].clone())
    }
}

fn unary(rng: &mut impl Rng, x: &Var) -> Result<Var> {
    match rng.gen_range(0..10) {
        0 => b::neg(x),
        1 => b::exp(&b::tanh(x)?),
        2 => b::tanh(x),
        3 => b::sigmoid(x),
        4 => b::softplus(x),
        5 => b::sqr(&b::tanh(x)?),
        6 => b::log(&b::add(&b::sqr(x)?, &Var::scalar(1.0))?),
        7 => b::log(&b::sigmoid(x)?),
        8 => b::log(&b::add(&Var::scalar(1.0), &b::sigmoid(x)?)?),
        _ => b::scale(x, 0.5),
    }
}

fn binary(rng: &mut impl Rng, x: &Var, y: &Var) -> Result<Var> {
    match rng.gen_range(0..6) {
        0 => b::add(x, y),
        1 => b::sub(x, y),
        2 => b::mul(x, y),
        3 => b::div(x, &b::add(&b::sqr(y)?, &Var::scalar(1.0))?),
        4 => b::maximum(x, y),
        _ => b::sub(&b::add(x, y)?, x),
    }
}

fn scan_op(rng: &mut impl Rng, pool: &Pool, seq: &Var) -> Result<(Var, Var)> {
    let init = pool.pick_kind(rng, Kind::Row).unwrap();
    let c = pool.pick_kind(rng, Kind::Row).unwrap();
    let scale = rng.gen_range(0.3..0.9);
    let out = Scan::new().sequence(seq).state(&init).nonsequence(&c).build(|body| {
        let mix = b::add(&b::mul(body.seq(0), body.state(0))?, body.nonseq(0))?;
        let next = b::tanh(&b::scale(&mix, scale)?)?;
        Ok(Step::from(vec![next.clone()]).with_extra(vec![b::sum(&next)?]))
    })?;
    Ok((out.states[0].clone(), out.extras[0].clone()))
}

fn grow(rng: &mut impl Rng, pool: &mut Pool, cfg: &RandomGraphConfig) -> Result<()> {
    let (x, kx) = pool.pick(rng);
    let choice = rng.gen_range(0..12);
    let (v, k) = match choice {
        0..=2 => (unary(rng, &x)?, kx),
        3..=5 => {
            // A partner that broadcasts against `x`.
            let (y, ky) = pool.pick(rng);
            let ok = matches!(
                (kx, ky),
                (a, c) if a == c
            ) || ky == Kind::Scalar
                || (kx == Kind::Mat && ky == Kind::Row);
            if ok {
                (binary(rng, &x, &y)?, kx)
            } else {
                (unary(rng, &x)?, kx)
            }
        }
        6 => (b::sum(&x)?, Kind::Scalar),
        7 => match kx {
            Kind::Mat => {
                if rng.gen_bool(0.5) {
                    (b::sum_axis(&x, 0)?, Kind::Row)
                } else {
                    (b::max_axis(&x, 1)?, Kind::Col)
                }
            }
            _ => (b::sum(&x)?, Kind::Scalar),
        },
        8 => match kx {
            Kind::Mat => {
                let r = pool.pick_kind(rng, Kind::Row).unwrap();
                (b::dot(&x, &r)?, Kind::Col)
            }
            Kind::Col => {
                let m = pool.pick_kind(rng, Kind::Mat).unwrap();
                (b::dot(&x, &m)?, Kind::Row)
            }
            Kind::Row => {
                let r = pool.pick_kind(rng, Kind::Row).unwrap();
                (b::dot(&x, &r)?, Kind::Scalar)
            }
            Kind::Scalar => (b::mul(&x, &x)?, Kind::Scalar),
        },
        9 => match kx {
            Kind::Mat | Kind::Row => (b::softmax(&x)?, kx),
            _ => (b::sigmoid(&x)?, kx),
        },
        10 if cfg.branches => {
            let (y, _) = pool.pick(rng);
            let cond = b::gt(&b::sum(&y)?, &b::sum(&x)?)?;
            let alt = unary(rng, &x)?;
            (b::if_else(&cond, &x, &alt)?, kx)
        }
        11 if cfg.scans => {
            let seq = pool.pick_kind(rng, Kind::Mat).unwrap();
            let (states, sums) = scan_op(rng, pool, &seq)?;
            pool.vars.push((sums, Kind::Col));
            (states, Kind::Mat)
        }
        _ => (b::tanh(&x)?, kx),
    };
    pool.vars.push((v, k));
    Ok(())
}

/// A random graph; inputs are `[matrix (m, n), vector (n), scalar]`.
pub fn random_graph(rng: &mut impl Rng, cfg: &RandomGraphConfig) -> Graph {
    let m = rng.gen_range(2..=4);
    let n = rng.gen_range(2..=4);
    let rows = if cfg.unknown_rows { Dim::Unknown } else { Dim::Known(m) };
    let a = Var::input("a", TensorType::matrix(DType::F64, rows, Dim::Known(n)));
    let v = Var::input("v", TensorType::vector(DType::F64, Dim::Known(n)));
    let s = Var::input("s", TensorType::scalar(DType::F64));
    let mut pool = Pool { vars: vec![(a.clone(), Kind::Mat), (v.clone(), Kind::Row), (s.clone(), Kind::Scalar)] };
    for _ in 0..cfg.n_ops {
        grow(rng, &mut pool, cfg).expect("random ops are well typed");
    }
    let n_out = cfg.n_outputs.max(1);
    let outputs: Vec<Var> = pool.vars.iter().rev().take(n_out).map(|(v, _)| v.clone()).collect();
    Graph::new(vec![a, v, s], outputs)
}
