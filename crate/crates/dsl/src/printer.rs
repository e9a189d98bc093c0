//! Canonical text for a [`Program`]. Parsing the output gives back an equal
//! program.

use std::fmt::Write;

use crate::ast::*;

pub fn print(p: &Program) -> String {
    let mut out = String::new();
    for (i, d) in p.decls.iter().enumerate() {
        if i > 0 && matches!(d, Decl::Scan(_) | Decl::Fn(_)) {
            out.push('\n');
        }
        decl(&mut out, d);
    }
    out
}

fn names(ids: &[Ident]) -> String {
    ids.iter().map(|i| i.name.as_str()).collect::<Vec<_>>().join(", ")
}

fn number(v: f64) -> String {
    format!("{v:?}")
}

fn decl(out: &mut String, d: &Decl) {
    match d {
        Decl::Input { name, dtype, dims, .. } => {
            let dims: Vec<String> = dims.iter().map(|d| d.map_or("?".to_string(), |n| n.to_string())).collect();
            let _ = writeln!(out, "input {} : {}[{}];", name.name, dtype.name(), dims.join(", "));
        }
        Decl::Shared { name, dtype, init, .. } => {
            let ty = dtype.map(|t| format!(" : {}", t.name())).unwrap_or_default();
            let _ = writeln!(out, "shared {}{ty} = {};", name.name, literal(init));
        }
        Decl::Let { names: ns, value, .. } => {
            let _ = writeln!(out, "let {} = {};", names(ns), expr(value));
        }
        Decl::Scan(s) => {
            let over = if s.seqs.is_empty() { String::new() } else { format!(" over {}", names(&s.seqs)) };
            let inits: Vec<String> = s.inits.iter().map(expr).collect();
            let _ = writeln!(out, "scan {}{over} from {} {{", s.name.name, inits.join(", "));
            let _ = writeln!(out, "    state {};", names(&s.states));
            for stmt in &s.body {
                match stmt {
                    BodyStmt::Let { names: ns, value, .. } => {
                        let _ = writeln!(out, "    let {} = {};", names(ns), expr(value));
                    }
                    BodyStmt::Next { state, value, .. } => {
                        let _ = writeln!(out, "    {} = {};", state.name, expr(value));
                    }
                }
            }
            out.push('}');
            if let Some(u) = &s.until {
                let _ = write!(out, " until {}", expr(u));
            }
            if let Some(n) = &s.steps {
                let _ = write!(out, " steps {}", expr(n));
            }
            out.push_str(";\n");
        }
        Decl::Fn(f) => {
            let outs: Vec<String> = f.outputs.iter().map(expr).collect();
            let _ = write!(out, "fn {}({}) -> ({})", f.name.name, names(&f.params), outs.join(", "));
            if !f.updates.is_empty() {
                let ups: Vec<String> = f.updates.iter().map(|(t, e)| format!("{} <- {}", t.name, expr(e))).collect();
                let _ = write!(out, "\n    updates {}", ups.join(",\n            "));
            }
            out.push_str(";\n");
        }
    }
}

fn literal(l: &Literal) -> String {
    match l {
        Literal::Number(v, _) => number(*v),
        Literal::Array(items, _) => format!("[{}]", items.iter().map(literal).collect::<Vec<_>>().join(", ")),
        Literal::Ctor { name, args, .. } => {
            format!("{}({})", name.name, args.iter().map(|v| number(*v)).collect::<Vec<_>>().join(", "))
        }
    }
}

/// Precedence of an expression as an operand; atoms bind tightest.
fn prec(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Binary(op, ..) => op.precedence(),
        ExprKind::Neg(_) => 4,
        _ => 5,
    }
}

fn wrapped(e: &Expr, parens: bool) -> String {
    if parens {
        format!("({})", expr(e))
    } else {
        expr(e)
    }
}

pub fn expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Number(v) => number(*v),
        ExprKind::Name(n) => n.clone(),
        ExprKind::Field(a, b) => format!("{}.{}", a.name, b.name),
        ExprKind::Neg(x) => format!("-{}", wrapped(x, prec(x) < 4)),
        ExprKind::Binary(op, a, b) => {
            let p = op.precedence();
            // Comparisons do not chain, so either side that is one needs parentheses.
            let left = prec(a) < p || (p == 1 && prec(a) == 1);
            let right = prec(b) <= p;
            format!("{} {} {}", wrapped(a, left), op.symbol(), wrapped(b, right))
        }
        ExprKind::Call(f, args) => format!("{}({})", f.name, args.iter().map(expr).collect::<Vec<_>>().join(", ")),
        ExprKind::Grad(c, wrt) => format!("grad({}, {})", expr(c), names(wrt)),
    }
}
