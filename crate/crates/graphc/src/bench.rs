//! Benchmark models and the runtime-option ladder.
//!
//! Every model is a classifier trained by plain SGD on seeded synthetic data.
//! The recurrent model is an Elman network with tanh hidden units and a
//! softmax output over as many classes as it has input units.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use graphc_core::autodiff::grad;
use graphc_core::builder as b;
use graphc_core::scan::Scan;
use graphc_core::vm::{self, CompiledFunction, Options};
use graphc_core::{DType, Dim, Graph, Result, Tensor, TensorType, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Logreg,
    Mlp1,
    Mlp3,
    Rnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Logreg, ModelKind::Mlp1, ModelKind::Mlp3, ModelKind::Rnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Logreg => "logreg",
            ModelKind::Mlp1 => "mlp1",
            ModelKind::Mlp3 => "mlp3",
            ModelKind::Rnn => "rnn",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown model `{s}`; expected logreg, mlp1, mlp3 or rnn"))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One rung of the runtime-option ladder. Each rung keeps the switches of
/// the ones before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rung {
    /// Garbage collection of intermediates and input checking.
    Default,
    /// Intermediate buffers are kept between calls.
    Nogc,
    /// Inputs are not checked or converted.
    Trust,
    /// Data lives in shared variables and the loop runs inside the function.
    Ncalls,
}

impl Rung {
    pub const ALL: [Rung; 4] = [Rung::Default, Rung::Nogc, Rung::Trust, Rung::Ncalls];

    pub fn name(self) -> &'static str {
        match self {
            Rung::Default => "default",
            Rung::Nogc => "nogc",
            Rung::Trust => "trust",
            Rung::Ncalls => "ncalls",
        }
    }

    pub fn options(self) -> Options {
        match self {
            Rung::Default => Options::default(),
            Rung::Nogc => Options::default().nogc(),
            Rung::Trust | Rung::Ncalls => Options::default().nogc().trusted(),
        }
    }
}

impl FromStr for Rung {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Rung::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown ladder entry `{s}`; expected default, nogc, trust or ncalls"))
    }
}

impl fmt::Display for Rung {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub model: ModelKind,
    /// Input units; for the recurrent model also the number of classes.
    pub input_dim: usize,
    pub classes: usize,
    pub hidden: Vec<usize>,
    pub batch: usize,
    /// Sequence length of the recurrent model.
    pub seq_len: usize,
    pub ladder: Vec<Rung>,
    /// Training steps per timed repetition.
    pub steps: usize,
    /// Timed repetitions; the median is reported.
    pub reps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl BenchConfig {
    /// Desk-scale defaults. `full` selects the three 1000-unit layers for
    /// mlp3.
    pub fn new(model: ModelKind, batch: usize, full: bool) -> BenchConfig {
        let (input_dim, classes, hidden, lr) = match model {
            ModelKind::Logreg => (784, 10, vec![], 0.1),
            ModelKind::Mlp1 => (784, 10, vec![500], 0.1),
            ModelKind::Mlp3 if full => (784, 10, vec![1000; 3], 0.05),
            ModelKind::Mlp3 => (784, 10, vec![200; 3], 0.05),
            ModelKind::Rnn => (20, 20, vec![50], 0.1),
        };
        BenchConfig {
            model,
            input_dim,
            classes,
            hidden,
            batch: if model == ModelKind::Rnn { 1 } else { batch },
            seq_len: 32,
            ladder: Rung::ALL.to_vec(),
            steps: 50,
            reps: 5,
            learning_rate: lr,
            seed: 1234,
        }
    }

    /// Examples (or sequence elements) processed by one training step.
    pub fn units_per_step(&self) -> usize {
        match self.model {
            ModelKind::Rnn => self.seq_len * self.batch,
            _ => self.batch,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.input_dim == 0 || self.classes == 0 || self.batch == 0 || self.seq_len == 0 {
            return Err("dimensions must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err("hidden sizes must be positive".into());
        }
        if self.steps == 0 || self.reps == 0 {
            return Err("steps and reps must be positive".into());
        }
        match self.model {
            ModelKind::Logreg if !self.hidden.is_empty() => Err("logreg has no hidden layer".into()),
            ModelKind::Mlp1 | ModelKind::Rnn if self.hidden.len() != 1 => Err(format!("{} has one hidden layer", self.model)),
            ModelKind::Mlp3 if self.hidden.len() != 3 => Err("mlp3 has three hidden layers".into()),
            ModelKind::Rnn if self.batch != 1 => Err("the recurrent model runs with batch 1".into()),
            ModelKind::Rnn if self.input_dim != self.classes => {
                Err("the recurrent model predicts its own symbols, so input and classes must match".into())
            }
            _ => Ok(()),
        }
    }
}

/// A batch of training data: `x` is `[batch, input]` (or `[seq, input]` for
/// the recurrent model) and `y` holds i64 class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor,
    pub y: Tensor,
}

/// Seeded synthetic data. Classifier inputs are noisy copies of one
/// prototype per class. Sequences walk through the symbols, mostly stepping
/// by one, and the target is the next symbol.
pub struct Data {
    cfg: BenchConfig,
    rng: ChaCha8Rng,
    prototypes: Vec<Vec<f64>>,
}

impl Data {
    pub fn new(cfg: &BenchConfig) -> Data {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xda7a);
        let prototypes =
            (0..cfg.classes).map(|_| (0..cfg.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        Data { cfg: cfg.clone(), rng, prototypes }
    }

    pub fn batch(&mut self) -> Batch {
        let c = &self.cfg;
        if c.model == ModelKind::Rnn {
            let n = c.input_dim;
            let mut s = self.rng.gen_range(0..n);
            let mut x = vec![0.0; c.seq_len * n];
            let mut y = Vec::with_capacity(c.seq_len);
            for t in 0..c.seq_len {
                x[t * n + s] = 1.0;
                s = (s + if self.rng.gen_bool(0.9) { 1 } else { 2 }) % n;
                y.push(s as f64);
            }
            return Batch {
                x: Tensor::matrix(c.seq_len, n, x).unwrap(),
                y: Tensor::new(DType::I64, vec![c.seq_len], y).unwrap(),
            };
        }
        let mut x = Vec::with_capacity(c.batch * c.input_dim);
        let mut y = Vec::with_capacity(c.batch);
        for _ in 0..c.batch {
            let k = self.rng.gen_range(0..c.classes);
            y.push(k as f64);
            x.extend(self.prototypes[k].iter().map(|p| p + 0.5 * self.rng.gen_range(-1.0..1.0)));
        }
        Batch { x: Tensor::matrix(c.batch, c.input_dim, x).unwrap(), y: Tensor::new(DType::I64, vec![c.batch], y).unwrap() }
    }
}

/// A built model.
pub struct Model {
    /// Data inputs: `x` then `y`. Shared variables when built for
    /// [`Rung::Ncalls`].
    pub x: Var,
    pub y: Var,
    pub params: Vec<Var>,
    /// Network output before the loss (class scores).
    pub scores: Var,
    pub cost: Var,
    /// Inputs `[x, y]` (none when data is shared), output `[cost]`, SGD
    /// updates of every parameter.
    pub train: Graph,
}

fn glorot(rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize) -> Var {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Var::shared(name, Tensor::matrix(rows, cols, data).unwrap())
}

fn zeros(name: &str, n: usize) -> Var {
    Var::shared(name, Tensor::zeros(DType::F64, &[n]))
}

/// Builds `cfg.model`. With `shared_data`, the data are shared variables
/// initialised from `batch` and the training function takes no inputs.
pub fn build_model(cfg: &BenchConfig, shared_data: Option<&Batch>) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (x, y) = match shared_data {
        Some(bt) => (Var::shared("x", bt.x.clone()), Var::shared("y", bt.y.clone())),
        None => {
            let rows = if cfg.model == ModelKind::Rnn { Dim::Known(cfg.seq_len) } else { Dim::Unknown };
            (
                Var::input("x", TensorType::matrix(DType::F64, rows, Dim::Known(cfg.input_dim))),
                Var::input("y", TensorType::vector(DType::I64, rows)),
            )
        }
    };
    let mut params = Vec::new();
    let scores = if cfg.model == ModelKind::Rnn {
        let (n, h) = (cfg.input_dim, cfg.hidden[0]);
        let w = glorot(&mut rng, "w", n, h);
        let u = glorot(&mut rng, "u", h, h);
        let bh = zeros("bh", h);
        let v = glorot(&mut rng, "v", h, cfg.classes);
        let c = zeros("c", cfg.classes);
        let h0 = Var::constant(Tensor::zeros(DType::F64, &[h]));
        // The input projection has no recurrence, so optimization hoists it
        // out of the loop.
        let out = Scan::new().sequence(&x).state(&h0).build(|body| {
            let pre = b::add(&b::add(&b::dot(body.seq(0), &w)?, &b::dot(body.state(0), &u)?)?, &bh)?;
            Ok(vec![b::tanh(&pre)?].into())
        })?;
        let scores = b::add(&b::dot(&out.states[0], &v)?, &c)?;
        params.extend([w, u, bh, v, c]);
        scores
    } else {
        let mut act = x.clone();
        let mut fan_in = cfg.input_dim;
        for (i, &h) in cfg.hidden.iter().enumerate() {
            let w = glorot(&mut rng, &format!("w{}", i + 1), fan_in, h);
            let bias = zeros(&format!("b{}", i + 1), h);
            act = b::tanh(&b::add(&b::dot(&act, &w)?, &bias)?)?;
            params.extend([w, bias]);
            fan_in = h;
        }
        let w = glorot(&mut rng, "w_out", fan_in, cfg.classes);
        let bias = zeros("b_out", cfg.classes);
        let scores = b::add(&b::dot(&act, &w)?, &bias)?;
        params.extend([w, bias]);
        scores
    };
    let p = b::softmax(&scores)?;
    let n = cfg.units_per_step() as f64;
    let cost = b::mul(&b::sum(&b::crossentropy(&p, &y)?)?, &Var::scalar(1.0 / n))?;
    let grads = grad(&cost, &params)?;
    let lr = Var::scalar(cfg.learning_rate);
    let mut updates = Vec::new();
    for (p, g) in params.iter().zip(&grads) {
        updates.push((p.clone(), b::sub(p, &b::mul(&lr, g)?)?));
    }
    let inputs = if shared_data.is_some() { vec![] } else { vec![x.clone(), y.clone()] };
    let train = Graph::new(inputs, vec![cost.clone()]).with_updates(updates);
    Ok(Model { x, y, params, scores, cost, train })
}

/// Losses over `steps` SGD steps on one fixed batch, with default options.
/// Entry `i` is the loss before update `i`; the last entry is the loss after
/// every update.
pub fn train_losses(cfg: &BenchConfig, steps: usize) -> Result<Vec<f64>> {
    let batch = Data::new(cfg).batch();
    let m = build_model(cfg, None)?;
    let mut f = vm::compile(&m.train, Options::default())?;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..=steps {
        losses.push(f.call(vec![batch.x.clone(), batch.y.clone()])?[0].data()[0]);
    }
    Ok(losses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub model: ModelKind,
    pub batch: usize,
    pub hidden: Vec<usize>,
    pub rung: Rung,
    /// Examples per second, or sequence elements per second for rnn.
    pub throughput: f64,
    /// Examples or sequence elements processed in one repetition.
    pub units_per_rep: usize,
    /// Wall time of each timed repetition, in seconds.
    pub rep_seconds: Vec<f64>,
    pub median_seconds: f64,
    pub final_loss: f64,
}

impl BenchResult {
    /// Throughput recomputed from the raw timings.
    pub fn recomputed_throughput(&self) -> f64 {
        self.units_per_rep as f64 / median(&self.rep_seconds)
    }
}

/// Median over rounds of how much faster `b` ran than `a` in the same round.
/// Less sensitive to changes in machine speed than comparing medians.
pub fn paired_speedup(a: &BenchResult, b: &BenchResult) -> f64 {
    let ratios: Vec<f64> = a.rep_seconds.iter().zip(&b.rep_seconds).map(|(x, y)| x / y).collect();
    median(&ratios)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

struct Runner {
    rung: Rung,
    f: CompiledFunction,
    batches: Vec<Batch>,
    next: usize,
    loss: f64,
}

impl Runner {
    fn rep(&mut self, steps: usize) -> Result<f64> {
        let t = Instant::now();
        let out = if self.rung == Rung::Ncalls {
            self.f.call_repeated(steps)?
        } else {
            let mut out = Vec::new();
            for _ in 0..steps {
                let bt = &self.batches[self.next];
                self.next = (self.next + 1) % self.batches.len();
                out = self.f.call(vec![bt.x.clone(), bt.y.clone()])?;
            }
            out
        };
        let secs = t.elapsed().as_secs_f64();
        self.loss = out[0].data()[0];
        Ok(secs)
    }
}

/// Compiled training functions for every rung of `cfg.ladder`.
pub fn compile_ladder(cfg: &BenchConfig) -> Result<Vec<(Rung, CompiledFunction)>> {
    let mut data = Data::new(cfg);
    let first = data.batch();
    cfg.ladder
        .iter()
        .map(|&r| {
            let m = build_model(cfg, (r == Rung::Ncalls).then_some(&first))?;
            Ok((r, vm::compile(&m.train, r.options())?))
        })
        .collect()
}

/// Times every rung of the ladder. Repetitions are interleaved across rungs
/// so slow drifts in machine speed affect each rung alike; see
/// [`paired_speedup`]. One untimed
/// warm-up repetition precedes the timed ones.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchResult>> {
    cfg.validate().map_err(graphc_core::Error::Usage)?;
    let mut data = Data::new(cfg);
    let batches: Vec<Batch> = (0..8).map(|_| data.batch()).collect();
    let mut runners: Vec<Runner> = compile_ladder(cfg)?
        .into_iter()
        .map(|(rung, f)| Runner { rung, f, batches: batches.clone(), next: 0, loss: f64::NAN })
        .collect();
    for r in &mut runners {
        r.rep(cfg.steps.min(5))?;
    }
    // Each round runs every rung once, starting from a different rung each
    // time, so that entry i of every rung's times comes from the same round.
    let n = runners.len();
    let mut times = vec![Vec::new(); n];
    for round in 0..cfg.reps {
        for k in 0..n {
            let j = (round + k) % n;
            times[j].push(runners[j].rep(cfg.steps)?);
        }
    }
    let units = cfg.steps * cfg.units_per_step();
    Ok(runners
        .iter()
        .zip(times)
        .map(|(r, rep_seconds)| {
            let m = median(&rep_seconds);
            BenchResult {
                model: cfg.model,
                batch: cfg.batch,
                hidden: cfg.hidden.clone(),
                rung: r.rung,
                throughput: units as f64 / m,
                units_per_rep: units,
                median_seconds: m,
                rep_seconds,
                final_loss: r.loss,
            }
        })
        .collect())
}
