use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use graphc::bench::{run_bench, BenchConfig, ModelKind, Rung};
use graphc::gradcheck::grad_check;
use graphc::report;
use graphc::values::inputs_for;
use graphc_core::rewrite::Level;
use graphc_core::vm::{self, Options};
use graphc_core::Graph;

#[derive(Parser)]
#[command(name = "graphc", version, about = "Compile, run and benchmark tensor expression graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize every function in a program and report the rewrites.
    Compile {
        file: PathBuf,
        /// none, stabilize_only or default
        #[arg(long, default_value = "default")]
        opt: String,
        /// Write the optimized graphs as GraphViz.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Print the rewrite reports as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Call one function and print its outputs.
    Run {
        file: PathBuf,
        #[arg(long = "fn")]
        func: String,
        /// Input value as name=JSON, e.g. x=[1,2,3]. Missing inputs are random.
        #[arg(long = "in", value_parser = parse_binding)]
        inputs: Vec<(String, String)>,
        #[arg(long, default_value = "default")]
        opt: String,
        /// Call this many times; updates apply after each call.
        #[arg(long, default_value_t = 1)]
        times: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare the gradient of a function's first output with finite differences.
    GradCheck {
        file: PathBuf,
        #[arg(long = "fn")]
        func: String,
        #[arg(long, default_value_t = 1e-6)]
        h: f64,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long = "in", value_parser = parse_binding)]
        inputs: Vec<(String, String)>,
        /// Check at most this many entries per variable.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time training steps of a benchmark model across runtime options.
    Bench {
        /// logreg, mlp1, mlp3 or rnn; comma separated for several.
        #[arg(long, value_delimiter = ',', default_value = "logreg")]
        model: Vec<ModelKind>,
        /// Batch sizes, comma separated. The recurrent model always uses 1.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        batch: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "default,nogc,trust,ncalls")]
        ladder: Vec<Rung>,
        /// Hidden layer sizes, overriding the model's defaults.
        #[arg(long, value_delimiter = ',')]
        hidden: Option<Vec<usize>>,
        /// Training steps per timed repetition.
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Use the 1000-unit layers for mlp3.
        #[arg(long)]
        full: bool,
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the compiled training graphs as GraphViz.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
}

fn parse_binding(s: &str) -> Result<(String, String), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    Ok((name.trim().to_string(), value.to_string()))
}

/// Failure of a command: diagnostics and usage problems exit with 1, a
/// failed numeric check with 2.
enum Failure {
    Diagnostics(String),
    Numeric(String),
}

impl From<String> for Failure {
    fn from(s: String) -> Self {
        Failure::Diagnostics(s)
    }
}

impl From<graphc_core::Error> for Failure {
    fn from(e: graphc_core::Error) -> Self {
        Failure::Diagnostics(e.to_string())
    }
}

fn level(s: &str) -> Result<Level, String> {
    Level::parse(s).ok_or_else(|| format!("unknown optimization level `{s}`; expected none, stabilize_only or default"))
}

fn load(path: &Path) -> Result<BTreeMap<String, Graph>, Failure> {
    let shown = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| format!("{shown}: {e}"))?;
    let rendered = |ds: Vec<graphc_dsl::Diagnostic>| {
        Failure::Diagnostics(ds.iter().map(|d| d.render(&shown)).collect::<Vec<_>>().join("\n"))
    };
    let program = graphc_dsl::parse_bytes(&bytes).map_err(rendered)?;
    graphc_dsl::lower(&program).map_err(rendered)
}

fn function(path: &Path, name: &str) -> Result<Graph, Failure> {
    let mut fns = load(path)?;
    let known = fns.keys().cloned().collect::<Vec<_>>().join(", ");
    fns.remove(name).ok_or_else(|| Failure::Diagnostics(format!("no function `{name}`; the program defines: {known}")))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Diagnostics(format!("{}: {e}", path.display())))
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::Compile { file, opt, dot, json } => {
            let lvl = level(&opt)?;
            let fns = load(&file)?;
            let mut compiled = Vec::new();
            for (name, g) in &fns {
                let f = vm::compile(g, Options::default().level(lvl)).map_err(|e| format!("fn {name}: {e}"))?;
                if json {
                    println!("{{\"fn\": {:?}, \"report\": {}}}", name, f.report().to_json());
                } else {
                    println!("fn {name}: {} nodes -> {} nodes, {} steps", g.node_count(), f.graph().node_count(), f.program().steps().len());
                    print!("{}", f.report().to_text());
                }
                compiled.push((name.clone(), f));
            }
            if let Some(path) = dot {
                let graphs: Vec<(String, &Graph)> = compiled.iter().map(|(n, f)| (n.clone(), f.graph())).collect();
                write(&path, &report::dot(&graphs))?;
            }
            Ok(())
        }
        Cmd::Run { file, func, inputs, opt, times, seed } => {
            let g = function(&file, &func)?;
            let xs = inputs_for(&g, &inputs, seed)?;
            let mut f = vm::compile(&g, Options::default().level(level(&opt)?))?;
            let mut outs = Vec::new();
            for _ in 0..times.max(1) {
                outs = f.call(xs.clone())?;
            }
            for (i, o) in outs.iter().enumerate() {
                println!("out{i} = {o}");
            }
            for (t, _) in &g.updates {
                println!("{} <- {}", t.label(), t.shared_value().unwrap().get());
            }
            Ok(())
        }
        Cmd::GradCheck { file, func, h, tol, inputs, limit, seed } => {
            let g = function(&file, &func)?;
            let xs = inputs_for(&g, &inputs, seed)?;
            let check = grad_check(&g, &xs, h, tol, limit)?;
            println!("{:<12} {:>6} {:>14} {:>14} {:>10}", "var", "index", "analytic", "numeric", "rel err");
            for e in &check.entries {
                println!("{:<12} {:>6} {:>14.6e} {:>14.6e} {:>10.2e}", e.var, e.index, e.analytic, e.numeric, e.rel_err);
            }
            println!("max relative error {:.3e} (tolerance {:.1e})", check.max_rel_err, tol);
            if check.passed() {
                Ok(())
            } else {
                let w = check.worst().unwrap();
                Err(Failure::Numeric(format!("gradient check failed: {}[{}] has relative error {:.3e}", w.var, w.index, w.rel_err)))
            }
        }
        Cmd::Bench { model, batch, ladder, hidden, steps, reps, seed, full, json, dot } => {
            let mut results = Vec::new();
            let mut graphs = Vec::new();
            for m in model {
                let batches = if m == ModelKind::Rnn { vec![1] } else { batch.clone() };
                for &bs in &batches {
                    let mut cfg = BenchConfig::new(m, bs, full);
                    cfg.ladder = ladder.clone();
                    cfg.steps = steps;
                    cfg.reps = reps;
                    cfg.seed = seed;
                    if let Some(h) = &hidden {
                        cfg.hidden = h.clone();
                    }
                    cfg.validate().map_err(|e| format!("{m}: {e}"))?;
                    eprintln!("bench {m} batch {bs} ...");
                    results.extend(run_bench(&cfg)?);
                    if dot.is_some() {
                        for (r, f) in graphc::bench::compile_ladder(&cfg)? {
                            graphs.push((format!("{m} batch {bs} {r}"), f.graph().clone()));
                        }
                    }
                }
            }
            print!("{}", report::table(&results));
            if let Some(path) = json {
                write(&path, &report::to_json(&results))?;
            }
            if let Some(path) = dot {
                let refs: Vec<(String, &Graph)> = graphs.iter().map(|(n, g)| (n.clone(), g)).collect();
                write(&path, &report::dot(&refs))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Diagnostics(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numeric(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
