//! Text, JSON and DOT output.

use std::fmt::Write;

use graphc_core::Graph;

use crate::bench::BenchResult;

const HEADER: [&str; 7] = ["model", "batch", "hidden", "option", "throughput/s", "median ms", "final loss"];

/// Aligned table, one row per result, grouped as the results are ordered
/// (model, then batch, then option).
pub fn table(results: &[BenchResult]) -> String {
    let rows: Vec<[String; 7]> = results
        .iter()
        .map(|r| {
            let hidden = if r.hidden.is_empty() {
                "-".to_string()
            } else {
                r.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("x")
            };
            [
                r.model.to_string(),
                r.batch.to_string(),
                hidden,
                r.rung.to_string(),
                format!("{:.1}", r.throughput),
                format!("{:.3}", r.median_seconds * 1e3),
                format!("{:.5}", r.final_loss),
            ]
        })
        .collect();
    let mut widths = HEADER.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            // Text columns are left aligned, numbers right aligned.
            if i == 0 || i == 2 || i == 3 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "{c:>w$}");
            }
            out.push_str(if i + 1 < cells.len() { "  " } else { "\n" });
        }
    };
    line(&mut out, &HEADER);
    for row in &rows {
        line(&mut out, &row.each_ref().map(String::as_str));
    }
    out
}

pub fn to_json(results: &[BenchResult]) -> String {
    serde_json::to_string_pretty(results).expect("results serialize")
}

pub fn from_json(s: &str) -> serde_json::Result<Vec<BenchResult>> {
    serde_json::from_str(s)
}

/// DOT text for several named graphs, one cluster each.
pub fn dot(graphs: &[(String, &Graph)]) -> String {
    if let [(_, g)] = graphs {
        return g.export_dot();
    }
    let mut out = String::from("digraph G {\n  rankdir=LR;\n");
    for (i, (name, g)) in graphs.iter().enumerate() {
        let _ = writeln!(out, "  subgraph cluster_{i} {{\n  label=\"{}\";", name.replace('"', "'"));
        out.push_str(&g.dot_statements(&format!("f{i}_out")));
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}
