//! Name resolution and call-shape checks. Collects every problem it finds.

use std::collections::HashMap;

use crate::ast::*;
use crate::builtins::{lookup, Arg, CTORS};
use crate::span::{Diagnostic, Phase, Span};

#[derive(Debug, Clone)]
enum Kind {
    Input,
    Shared,
    Value,
    Scan(Vec<String>),
    Fn,
}

#[derive(Default)]
struct Scope {
    names: HashMap<String, Kind>,
}

struct Resolver {
    scopes: Vec<Scope>,
    diags: Vec<Diagnostic>,
}

fn err(span: Span, msg: impl Into<String>) -> Diagnostic {
    Diagnostic::new(Phase::Resolve, span, msg)
}

fn is_int_literal(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Number(v) => v.fract() == 0.0,
        ExprKind::Neg(inner) => is_int_literal(inner),
        _ => false,
    }
}

fn is_literal(e: &Expr) -> bool {
    match &e.kind {
        ExprKind::Number(_) => true,
        ExprKind::Neg(inner) => is_literal(inner),
        _ => false,
    }
}

impl Resolver {
    fn lookup(&self, name: &str) -> Option<&Kind> {
        self.scopes.iter().rev().find_map(|s| s.names.get(name))
    }

    fn declare(&mut self, id: &Ident, kind: Kind) {
        let scope = self.scopes.last_mut().unwrap();
        if scope.names.contains_key(&id.name) {
            self.diags.push(err(id.span, format!("`{}` is already declared in this scope", id.name)));
        } else {
            scope.names.insert(id.name.clone(), kind);
        }
    }

    fn value_name(&mut self, name: &str, span: Span) {
        match self.lookup(name) {
            None => self.diags.push(err(span, format!("unknown name `{name}`"))),
            Some(Kind::Fn) => self.diags.push(err(span, format!("`{name}` is a function and has no value"))),
            Some(Kind::Scan(states)) if states.len() > 1 => {
                let s = states.join("`, `");
                self.diags.push(err(span, format!("scan `{name}` has several states; pick one of `{s}` with `{name}.<state>`")))
            }
            Some(_) => {}
        }
    }

    fn expr(&mut self, e: &Expr) {
        match &e.kind {
            ExprKind::Number(_) => {}
            ExprKind::Name(n) => self.value_name(n, e.span),
            ExprKind::Field(base, field) => match self.lookup(&base.name) {
                Some(Kind::Scan(states)) => {
                    if !states.contains(&field.name) {
                        let msg = format!("scan `{}` has no state `{}`", base.name, field.name);
                        self.diags.push(err(field.span, msg));
                    }
                }
                Some(_) => self.diags.push(err(base.span, format!("`{}` is not a scan", base.name))),
                None => self.diags.push(err(base.span, format!("unknown name `{}`", base.name))),
            },
            ExprKind::Neg(x) => self.expr(x),
            ExprKind::Binary(_, a, c) => {
                self.expr(a);
                self.expr(c);
            }
            ExprKind::Call(func, args) => {
                match lookup(&func.name) {
                    None => self.diags.push(err(func.span, format!("unknown function `{}`", func.name))),
                    Some(b) => {
                        if let Err(m) = b.check_arity(args.len()) {
                            self.diags.push(err(e.span, m));
                        }
                        for (i, a) in args.iter().enumerate() {
                            match b.arg(i) {
                                Arg::Int if !is_int_literal(a) => {
                                    self.diags.push(err(a.span, format!("argument {} of `{}` must be an integer literal", i + 1, b.name)))
                                }
                                Arg::Const if !is_literal(a) => {
                                    self.diags.push(err(a.span, format!("argument {} of `{}` must be a number", i + 1, b.name)))
                                }
                                _ => {}
                            }
                        }
                    }
                }
                for a in args {
                    self.expr(a);
                }
            }
            ExprKind::Grad(cost, wrt) => {
                self.expr(cost);
                if wrt.len() > 1 {
                    self.diags.push(err(e.span, "a gradient with respect to several names must be bound with `let a, b = grad(...)`"));
                }
                for w in wrt {
                    self.value_name(&w.name, w.span);
                }
            }
        }
    }

    /// `let` with one or more names.
    fn binding(&mut self, names: &[Ident], value: &Expr) {
        match &value.kind {
            ExprKind::Grad(cost, wrt) if names.len() > 1 || wrt.len() > 1 => {
                self.expr(cost);
                for w in wrt {
                    self.value_name(&w.name, w.span);
                }
                if names.len() != wrt.len() {
                    let msg = format!("{} names bound to a gradient with respect to {} names", names.len(), wrt.len());
                    self.diags.push(err(value.span, msg));
                }
            }
            _ if names.len() > 1 => {
                self.expr(value);
                self.diags.push(err(names[1].span, "only `grad(...)` produces several values"));
            }
            _ => self.expr(value),
        }
        for n in names {
            self.declare(n, Kind::Value);
        }
    }

    fn literal(&mut self, lit: &Literal) {
        match lit {
            Literal::Number(..) => {}
            Literal::Array(items, _) => items.iter().for_each(|l| self.literal(l)),
            Literal::Ctor { name, args, span } => match CTORS.iter().find(|(n, _)| *n == name.name) {
                None => {
                    let msg = format!("unknown initializer `{}`; use zeros, ones, fill or uniform", name.name);
                    self.diags.push(err(name.span, msg));
                }
                Some(&(_, lead)) => {
                    if args.len() < lead {
                        self.diags.push(err(*span, format!("`{}` needs {lead} leading arguments", name.name)));
                    }
                    for &d in args.iter().skip(lead) {
                        if d.fract() != 0.0 || d < 1.0 {
                            self.diags.push(err(*span, format!("extents of `{}` must be positive integers", name.name)));
                            break;
                        }
                    }
                }
            },
        }
    }

    fn scan(&mut self, s: &ScanDecl) {
        for q in &s.seqs {
            self.value_name(&q.name, q.span);
        }
        for i in &s.inits {
            self.expr(i);
        }
        if s.inits.len() != s.states.len() {
            let msg = format!("{} initial values for {} states", s.inits.len(), s.states.len());
            self.diags.push(err(s.name.span, msg));
        }
        if let Some(n) = &s.steps {
            self.expr(n);
        } else if s.seqs.is_empty() {
            self.diags.push(err(s.name.span, "a scan without sequences needs `steps`"));
        }
        self.scopes.push(Scope::default());
        for q in &s.seqs {
            self.declare(q, Kind::Value);
        }
        for st in &s.states {
            if st.name.ends_with('\'') {
                self.diags.push(err(st.span, "state names cannot be primed"));
            }
            self.declare(st, Kind::Value);
        }
        let mut updated: HashMap<String, Span> = HashMap::new();
        for stmt in &s.body {
            match stmt {
                BodyStmt::Let { names, value, .. } => self.binding(names, value),
                BodyStmt::Next { state, value, .. } => {
                    self.expr(value);
                    let base = state.name.trim_end_matches('\'');
                    if !s.states.iter().any(|x| x.name == base) {
                        self.diags.push(err(state.span, format!("`{base}` is not a state of this scan")));
                    } else if updated.insert(base.to_string(), state.span).is_some() {
                        self.diags.push(err(state.span, format!("state `{base}` is updated twice")));
                    }
                    self.declare(state, Kind::Value);
                }
            }
        }
        for st in &s.states {
            if !updated.contains_key(&st.name) {
                self.diags.push(err(st.span, format!("state `{}` has no update `{}' = ...`", st.name, st.name)));
            }
        }
        if let Some(u) = &s.until {
            self.expr(u);
        }
        self.scopes.pop();
        let states = s.states.iter().map(|x| x.name.clone()).collect();
        self.declare(&s.name, Kind::Scan(states));
    }

    fn function(&mut self, f: &FnDecl) {
        let mut seen = Vec::new();
        for p in &f.params {
            match self.lookup(&p.name) {
                Some(Kind::Input) => {}
                Some(_) => self.diags.push(err(p.span, format!("`{}` is not an input", p.name))),
                None => self.diags.push(err(p.span, format!("unknown input `{}`", p.name))),
            }
            if seen.contains(&&p.name) {
                self.diags.push(err(p.span, format!("`{}` is listed twice", p.name)));
            }
            seen.push(&p.name);
        }
        for o in &f.outputs {
            self.expr(o);
        }
        let mut targets = Vec::new();
        for (t, e) in &f.updates {
            match self.lookup(&t.name) {
                Some(Kind::Shared) => {}
                Some(_) => self.diags.push(err(t.span, format!("`{}` is not a shared variable", t.name))),
                None => self.diags.push(err(t.span, format!("unknown shared variable `{}`", t.name))),
            }
            if targets.contains(&&t.name) {
                self.diags.push(err(t.span, format!("`{}` is updated twice", t.name)));
            }
            targets.push(&t.name);
            self.expr(e);
        }
        self.declare(&f.name, Kind::Fn);
    }
}

/// Checks every name and call in `p`.
pub fn resolve(p: &Program) -> Vec<Diagnostic> {
    let mut r = Resolver { scopes: vec![Scope::default()], diags: Vec::new() };
    for d in &p.decls {
        match d {
            Decl::Input { name, .. } => r.declare(name, Kind::Input),
            Decl::Shared { name, init, .. } => {
                r.literal(init);
                r.declare(name, Kind::Shared);
            }
            Decl::Let { names, value, .. } => r.binding(names, value),
            Decl::Scan(s) => r.scan(s),
            Decl::Fn(f) => r.function(f),
        }
    }
    r.diags
}
