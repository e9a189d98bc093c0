//! Staged graph optimization.
//!
//! Stages run in order: canonicalize, stabilize, specialize (including the
//! loop optimizations), fuse, fold. Each stage repeats common-subexpression
//! elimination, its local rules and its whole-graph passes until nothing
//! changes, for at most [`MAX_ITERATIONS`] rounds. When several local rules
//! match a node the first registered one wins.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{mapped, reapply, rebuild, ApplyNode, Graph, Var};
use crate::types::{Dim, TensorType};

mod passes;
mod rules;
mod semantics;

pub use passes::{cse, fuse_elementwise};
pub use rules::builtin_rules;
pub use semantics::{check_semantics, check_semantics_with, random_inputs, SemanticsConfig, SemanticsReport};

pub const MAX_ITERATIONS: usize = 8;

/// Largest result, in elements, that constant folding materializes.
pub const FOLD_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    None,
    StabilizeOnly,
    Default,
}

impl Level {
    pub fn parse(s: &str) -> Option<Level> {
        match s.trim() {
            "none" => Some(Level::None),
            "stabilize_only" => Some(Level::StabilizeOnly),
            "default" => Some(Level::Default),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Level::None => "none",
            Level::StabilizeOnly => "stabilize_only",
            Level::Default => "default",
        }
    }

    fn stages(self) -> &'static [Stage] {
        match self {
            Level::None => &[],
            Level::StabilizeOnly => &[Stage::Canonicalize, Stage::Stabilize],
            Level::Default => &[Stage::Canonicalize, Stage::Stabilize, Stage::Specialize, Stage::Fuse, Stage::Fold],
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    Canonicalize,
    Stabilize,
    Specialize,
    Fuse,
    Fold,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Canonicalize => "canonicalize",
            Stage::Stabilize => "stabilize",
            Stage::Specialize => "specialize",
            Stage::Fuse => "fuse",
            Stage::Fold => "fold",
        }
    }
}

/// A node-local rewrite. `apply` sees a node whose inputs are already
/// rewritten and returns a replacement for its single output.
pub struct RewriteRule {
    pub name: &'static str,
    pub stage: Stage,
    /// Changes results outside the op's natural domain; off below the
    /// default level.
    pub domain_unsafe: bool,
    pub apply: fn(&Arc<ApplyNode>) -> Result<Option<Var>>,
}

impl fmt::Debug for RewriteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RewriteRule({}, {})", self.name, self.stage.name())
    }
}

type GraphPass = fn(&Graph, &Config) -> Result<(Graph, usize)>;

/// Whole-graph passes, by stage.
fn graph_passes(stage: Stage) -> Vec<(&'static str, GraphPass)> {
    use crate::scan::opt;
    match stage {
        Stage::Specialize => vec![
            ("scan_unroll", |g, _| opt::unroll_pass(g)),
            ("scan_hoist", |g, _| opt::hoist_pass(g)),
            ("scan_merge", |g, _| opt::merge_pass(g)),
            ("scan_inner", opt::inner_pass),
        ],
        Stage::Fuse => vec![("fuse_elementwise", |g, _| fuse_elementwise(g))],
        _ => vec![],
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub level: Level,
    /// Rule or pass names to skip.
    pub disabled: Vec<String>,
}

impl Config {
    pub fn new(level: Level) -> Config {
        Config { level, disabled: Vec::new() }
    }

    pub fn without(mut self, rule: &str) -> Config {
        self.disabled.push(rule.to_string());
        self
    }

    fn enabled(&self, name: &str) -> bool {
        !self.disabled.iter().any(|d| d == name)
    }
}

/// Application count and cost of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub rule: String,
    pub stage: String,
    pub count: usize,
    /// Graph size at the start and end of the rule's stage.
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub micros: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub iterations: usize,
    pub nodes_before: usize,
    pub nodes_after: usize,
    pub micros: u64,
}

/// What an [`optimize`] run did.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub level: String,
    pub rules: Vec<RuleReport>,
    pub stages: Vec<StageReport>,
    pub warnings: Vec<String>,
    pub nodes_before: usize,
    pub nodes_after: usize,
}

impl PassReport {
    /// Times `rule` fired (0 if it never ran).
    pub fn count(&self, rule: &str) -> usize {
        self.rules.iter().filter(|r| r.rule == rule).map(|r| r.count).sum()
    }

    pub fn total(&self) -> usize {
        self.rules.iter().map(|r| r.count).sum()
    }

    /// The per-rule rows as a JSON array.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "optimize level={} nodes {} -> {}\n{:<22} {:<13} {:>6} {:>8} {:>8} {:>9}\n",
            self.level, self.nodes_before, self.nodes_after, "rule", "stage", "count", "before", "after", "micros"
        );
        for r in &self.rules {
            s.push_str(&format!(
                "{:<22} {:<13} {:>6} {:>8} {:>8} {:>9}\n",
                r.rule, r.stage, r.count, r.nodes_before, r.nodes_after, r.micros
            ));
        }
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        s
    }
}

impl fmt::Display for PassReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Whether `new` may stand in for `old`: same dtype and rank, and every
/// extent `old` knows is known identically by `new`.
pub(crate) fn may_replace(new: &TensorType, old: &TensorType) -> bool {
    new.dtype == old.dtype
        && new.rank() == old.rank()
        && new.dims.iter().zip(&old.dims).all(|(n, o)| match o {
            Dim::Known(_) => n == o,
            Dim::Unknown => true,
        })
}

/// Rebuilds `g`, replacing whatever `f` maps.
pub(crate) fn transform(
    g: &Graph,
    f: impl FnMut(&Arc<ApplyNode>, Vec<Var>) -> Result<Vec<Var>>,
) -> Result<Graph> {
    let map = rebuild(&g.roots(), &HashMap::new(), f)?;
    Ok(Graph {
        inputs: g.inputs.clone(),
        outputs: g.outputs.iter().map(|v| mapped(&map, v)).collect(),
        updates: g.updates.iter().map(|(t, e)| (t.clone(), mapped(&map, e))).collect(),
    })
}

struct Tally {
    count: usize,
    nanos: u128,
}

fn apply_local(g: &Graph, rules: &[&RewriteRule], tally: &mut [Tally]) -> Result<(Graph, usize)> {
    let mut fired = 0;
    let out = transform(g, |node, inputs| {
        let outs = reapply(node, inputs)?;
        if outs.len() != 1 {
            return Ok(outs);
        }
        let Some((current, _)) = outs[0].owner() else { return Ok(outs) };
        let current = current.clone();
        for (rule, t) in rules.iter().zip(tally.iter_mut()) {
            let start = Instant::now();
            let r = (rule.apply)(&current).ok().flatten();
            t.nanos += start.elapsed().as_nanos();
            if let Some(r) = r {
                if r != outs[0] && may_replace(r.ty(), outs[0].ty()) {
                    t.count += 1;
                    fired += 1;
                    return Ok(vec![r]);
                }
            }
        }
        Ok(outs)
    })?;
    Ok((out, fired))
}

/// Optimizes at `level` with every rule enabled.
pub fn optimize(g: &Graph, level: Level) -> (Graph, PassReport) {
    optimize_with(g, &Config::new(level))
}

/// Runs the staged pipeline. Never fails: a pass that errors is skipped and
/// noted in the report, and the best graph so far is returned.
pub fn optimize_with(g: &Graph, config: &Config) -> (Graph, PassReport) {
    let all_rules = builtin_rules();
    let mut report = PassReport { level: config.level.name().to_string(), ..PassReport::default() };
    let mut g = g.clone();
    report.nodes_before = g.node_count();

    for &stage in config.level.stages() {
        let stage_start = Instant::now();
        let nodes_before = g.node_count();
        let rules: Vec<&RewriteRule> = all_rules
            .iter()
            .filter(|r| r.stage == stage && config.enabled(r.name))
            .filter(|r| !r.domain_unsafe || config.level == Level::Default)
            .collect();
        let passes: Vec<(&str, GraphPass)> =
            graph_passes(stage).into_iter().filter(|(n, _)| config.enabled(n)).collect();
        let mut tally: Vec<Tally> = rules.iter().map(|_| Tally { count: 0, nanos: 0 }).collect();
        let mut pass_tally: Vec<Tally> = passes.iter().map(|_| Tally { count: 0, nanos: 0 }).collect();
        let mut cse_tally = Tally { count: 0, nanos: 0 };

        let mut iterations = 0;
        let mut settled = false;
        while iterations < MAX_ITERATIONS {
            iterations += 1;
            let mut changed = 0;

            let start = Instant::now();
            match cse(&g) {
                Ok((ng, n)) => {
                    g = ng;
                    cse_tally.count += n;
                    changed += n;
                }
                Err(e) => report.warnings.push(format!("cse skipped: {e}")),
            }
            cse_tally.nanos += start.elapsed().as_nanos();

            if !rules.is_empty() {
                match apply_local(&g, &rules, &mut tally) {
                    Ok((ng, n)) => {
                        g = ng;
                        changed += n;
                    }
                    Err(e) => report.warnings.push(format!("{} rules skipped: {e}", stage.name())),
                }
            }
            for ((name, pass), t) in passes.iter().zip(pass_tally.iter_mut()) {
                let start = Instant::now();
                match pass(&g, config) {
                    Ok((ng, n)) => {
                        if n > 0 {
                            g = ng;
                        }
                        t.count += n;
                        changed += n;
                    }
                    Err(e) => report.warnings.push(format!("{name} skipped: {e}")),
                }
                t.nanos += start.elapsed().as_nanos();
            }
            if changed == 0 {
                settled = true;
                break;
            }
        }
        if !settled {
            report.warnings.push(format!("{} stopped at the iteration cap of {MAX_ITERATIONS}", stage.name()));
        }
        let nodes_after = g.node_count();
        let row = |rule: &str, t: &Tally| RuleReport {
            rule: rule.to_string(),
            stage: stage.name().to_string(),
            count: t.count,
            nodes_before,
            nodes_after,
            micros: (t.nanos / 1000) as u64,
        };
        report.rules.push(row("cse", &cse_tally));
        for (r, t) in rules.iter().zip(&tally) {
            report.rules.push(row(r.name, t));
        }
        for ((name, _), t) in passes.iter().zip(&pass_tally) {
            report.rules.push(row(name, t));
        }
        report.stages.push(StageReport {
            stage: stage.name().to_string(),
            iterations,
            nodes_before,
            nodes_after,
            micros: stage_start.elapsed().as_micros() as u64,
        });
    }
    report.nodes_after = g.node_count();
    (g, report)
}
