//! Turns a resolved [`Program`] into one [`Graph`] per function.

use std::collections::{BTreeMap, HashMap};

use graphc_core::autodiff::grad;
use graphc_core::builder as b;
use graphc_core::scan::{Scan, Step};
use graphc_core::{DType, Dim, Error, Graph, Tensor, TensorType, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ast::*;
use crate::span::{Diagnostic, Phase, Span};

type LResult<T> = Result<T, Diagnostic>;

#[derive(Clone)]
enum Binding {
    Value(Var),
    /// Stacked state sequences of a scan, by state name.
    Scan(Vec<(String, Var)>),
}

fn type_err(span: Span, e: impl std::fmt::Display) -> Diagnostic {
    Diagnostic::new(Phase::Type, span, e.to_string())
}

struct Lowerer {
    scopes: Vec<HashMap<String, Binding>>,
}

fn as_int(e: &Expr) -> Option<i64> {
    match &e.kind {
        ExprKind::Number(v) if v.fract() == 0.0 && v.abs() < 9e15 => Some(*v as i64),
        ExprKind::Neg(x) => as_int(x).map(|v| -v),
        _ => None,
    }
}

fn as_const(e: &Expr) -> Option<f64> {
    match &e.kind {
        ExprKind::Number(v) => Some(*v),
        ExprKind::Neg(x) => as_const(x).map(|v| -v),
        _ => None,
    }
}

fn axis(e: &Expr) -> LResult<usize> {
    as_int(e)
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| Diagnostic::new(Phase::Type, e.span, "axis must be a non-negative integer"))
}

impl Lowerer {
    fn bind(&mut self, name: &str, b: Binding) {
        self.scopes.last_mut().unwrap().insert(name.to_string(), b);
    }

    fn get(&self, name: &str, span: Span) -> LResult<&Binding> {
        self.scopes
            .iter()
            .rev()
            .find_map(|s| s.get(name))
            .ok_or_else(|| Diagnostic::new(Phase::Resolve, span, format!("unknown name `{name}`")))
    }

    fn value(&self, name: &str, span: Span) -> LResult<Var> {
        match self.get(name, span)? {
            Binding::Value(v) => Ok(v.clone()),
            Binding::Scan(states) if states.len() == 1 => Ok(states[0].1.clone()),
            Binding::Scan(_) => Err(Diagnostic::new(Phase::Resolve, span, format!("scan `{name}` has several states"))),
        }
    }

    fn expr(&mut self, e: &Expr) -> LResult<Var> {
        let t = |r: graphc_core::Result<Var>| r.map_err(|err| type_err(e.span, err));
        match &e.kind {
            ExprKind::Number(v) => Ok(Var::scalar(*v)),
            ExprKind::Name(n) => self.value(n, e.span),
            ExprKind::Field(base, field) => match self.get(&base.name, base.span)? {
                Binding::Scan(states) => states
                    .iter()
                    .find(|(n, _)| *n == field.name)
                    .map(|(_, v)| v.clone())
                    .ok_or_else(|| Diagnostic::new(Phase::Resolve, field.span, format!("no state `{}`", field.name))),
                Binding::Value(_) => Err(Diagnostic::new(Phase::Resolve, base.span, format!("`{}` is not a scan", base.name))),
            },
            ExprKind::Neg(x) => {
                let x = self.expr(x)?;
                t(b::neg(&x))
            }
            ExprKind::Binary(op, l, r) => {
                let l = self.expr(l)?;
                let r = self.expr(r)?;
                t(match op {
                    BinOp::Add => b::add(&l, &r),
                    BinOp::Sub => b::sub(&l, &r),
                    BinOp::Mul => b::mul(&l, &r),
                    BinOp::Div => b::div(&l, &r),
                    BinOp::Gt => b::gt(&l, &r),
                    BinOp::Lt => b::lt(&l, &r),
                    BinOp::Ge => b::ge(&l, &r),
                })
            }
            ExprKind::Call(f, args) => self.call(e, f, args),
            ExprKind::Grad(cost, wrt) => {
                let mut gs = self.grads(e.span, cost, wrt)?;
                if gs.len() != 1 {
                    return Err(Diagnostic::new(Phase::Resolve, e.span, "bind several gradients with `let a, b = grad(...)`"));
                }
                Ok(gs.remove(0))
            }
        }
    }

    fn grads(&mut self, span: Span, cost: &Expr, wrt: &[Ident]) -> LResult<Vec<Var>> {
        let c = self.expr(cost)?;
        let ws = wrt.iter().map(|w| self.value(&w.name, w.span)).collect::<LResult<Vec<_>>>()?;
        grad(&c, &ws).map_err(|err| match err {
            Error::NonScalarCost(_) => type_err(cost.span, format!("cannot differentiate a non-scalar: {err}")),
            other => type_err(span, other),
        })
    }

    fn call(&mut self, e: &Expr, f: &Ident, args: &[Expr]) -> LResult<Var> {
        let t = |r: graphc_core::Result<Var>| r.map_err(|err| type_err(e.span, err));
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Diagnostic::new(Phase::Resolve, e.span, format!("`{}` takes {n} arguments, got {}", f.name, args.len())))
            }
        };
        let name = f.name.as_str();
        match name {
            "neg" | "exp" | "log" | "log1p" | "sigmoid" | "softplus" | "tanh" | "sqr" | "softmax" | "transpose" | "zeros_like" => {
                arity(1)?;
                let x = self.expr(&args[0])?;
                t(match name {
                    "neg" => b::neg(&x),
                    "exp" => b::exp(&x),
                    "log" => b::log(&x),
                    "log1p" => b::log1p(&x),
                    "sigmoid" => b::sigmoid(&x),
                    "softplus" => b::softplus(&x),
                    "tanh" => b::tanh(&x),
                    "sqr" => b::sqr(&x),
                    "softmax" => b::softmax(&x),
                    "transpose" => b::transpose(&x),
                    _ => b::zeros_like(&x),
                })
            }
            "dot" | "maximum" | "crossentropy" | "concat" => {
                arity(2)?;
                let x = self.expr(&args[0])?;
                let y = self.expr(&args[1])?;
                t(match name {
                    "dot" => b::dot(&x, &y),
                    "maximum" => b::maximum(&x, &y),
                    "crossentropy" => b::crossentropy(&x, &y),
                    _ => b::concat(&x, &y),
                })
            }
            "if_else" => {
                arity(3)?;
                let c = self.expr(&args[0])?;
                let x = self.expr(&args[1])?;
                let y = self.expr(&args[2])?;
                t(b::if_else(&c, &x, &y))
            }
            "sum" | "max" => {
                let x = self.expr(&args[0])?;
                match (name, args.get(1)) {
                    ("sum", None) => t(b::sum(&x)),
                    ("sum", Some(a)) => t(b::sum_axis(&x, axis(a)?)),
                    (_, None) => t(b::max(&x)),
                    (_, Some(a)) => t(b::max_axis(&x, axis(a)?)),
                }
            }
            "argmax" => {
                arity(2)?;
                let x = self.expr(&args[0])?;
                t(b::argmax(&x, axis(&args[1])?))
            }
            "pow" => {
                arity(2)?;
                let x = self.expr(&args[0])?;
                let p = as_const(&args[1]).ok_or_else(|| Diagnostic::new(Phase::Type, args[1].span, "exponent must be a number"))?;
                t(b::pow(&x, p))
            }
            "index" => {
                arity(2)?;
                let x = self.expr(&args[0])?;
                let i = as_int(&args[1]).ok_or_else(|| Diagnostic::new(Phase::Type, args[1].span, "index must be an integer"))?;
                t(b::index(&x, i))
            }
            "reshape" => {
                let x = self.expr(&args[0])?;
                let dims = args[1..]
                    .iter()
                    .map(|a| as_int(a).ok_or_else(|| Diagnostic::new(Phase::Type, a.span, "extent must be an integer")))
                    .collect::<LResult<Vec<_>>>()?;
                t(b::reshape(&x, &dims))
            }
            "stack" => {
                let xs = args.iter().map(|a| self.expr(a)).collect::<LResult<Vec<_>>>()?;
                t(b::stack(&xs))
            }
            _ => Err(Diagnostic::new(Phase::Resolve, f.span, format!("unknown function `{name}`"))),
        }
    }

    fn let_binding(&mut self, names: &[Ident], value: &Expr) -> LResult<()> {
        match &value.kind {
            ExprKind::Grad(cost, wrt) if names.len() > 1 || wrt.len() > 1 => {
                if names.len() != wrt.len() {
                    return Err(Diagnostic::new(Phase::Resolve, value.span, "gradient arity mismatch"));
                }
                let gs = self.grads(value.span, cost, wrt)?;
                for (n, g) in names.iter().zip(gs) {
                    self.bind(&n.name, Binding::Value(g));
                }
            }
            _ => {
                let v = self.expr(value)?;
                self.bind(&names[0].name, Binding::Value(v));
            }
        }
        Ok(())
    }

    fn scan(&mut self, s: &ScanDecl) -> LResult<()> {
        let mut sc = Scan::new();
        for q in &s.seqs {
            sc = sc.sequence(&self.value(&q.name, q.span)?);
        }
        for i in &s.inits {
            sc = sc.state(&self.expr(i)?);
        }
        if let Some(n) = &s.steps {
            if let Some(k) = as_int(n) {
                let k = usize::try_from(k).map_err(|_| Diagnostic::new(Phase::Type, n.span, "step count must be non-negative"))?;
                sc = sc.fixed_steps(k);
            } else {
                let v = self.expr(n)?;
                if !v.ty().is_scalar() || v.ty().dtype != DType::I64 {
                    return Err(Diagnostic::new(Phase::Type, n.span, format!("step count must be an i64 scalar, not {}", v.ty())));
                }
                sc = sc.n_steps(&v);
            }
        }

        // Diagnostics raised inside the body are passed out through here.
        let mut failure: Option<Diagnostic> = None;
        let built = sc.build(|body| {
            let r = self.scan_body(s, body);
            r.map_err(|d| {
                let msg = d.message.clone();
                failure = Some(d);
                Error::Scan(msg)
            })
        });
        if let Some(d) = failure {
            return Err(d);
        }
        let out = built.map_err(|e| type_err(s.span, e))?;
        let states = s.states.iter().map(|x| x.name.clone()).zip(out.states).collect();
        self.bind(&s.name.name, Binding::Scan(states));
        Ok(())
    }

    fn scan_body(&mut self, s: &ScanDecl, body: &graphc_core::scan::Body) -> LResult<Step> {
        self.scopes.push(HashMap::new());
        let r = (|| {
            for (i, q) in s.seqs.iter().enumerate() {
                self.bind(&q.name, Binding::Value(body.seq(i).clone()));
            }
            for (j, st) in s.states.iter().enumerate() {
                self.bind(&st.name, Binding::Value(body.state(j).clone()));
            }
            let mut next: Vec<Option<Var>> = vec![None; s.states.len()];
            for stmt in &s.body {
                match stmt {
                    BodyStmt::Let { names, value, .. } => self.let_binding(names, value)?,
                    BodyStmt::Next { state, value, .. } => {
                        let v = self.expr(value)?;
                        let base = state.name.trim_end_matches('\'');
                        let j = s
                            .states
                            .iter()
                            .position(|x| x.name == base)
                            .ok_or_else(|| Diagnostic::new(Phase::Resolve, state.span, format!("`{base}` is not a state")))?;
                        next[j] = Some(v.clone());
                        self.bind(&state.name, Binding::Value(v));
                    }
                }
            }
            let next = next
                .into_iter()
                .zip(&s.states)
                .map(|(n, st)| n.ok_or_else(|| Diagnostic::new(Phase::Resolve, st.span, format!("state `{}` is never updated", st.name))))
                .collect::<LResult<Vec<_>>>()?;
            let mut step = Step::from(next);
            if let Some(u) = &s.until {
                step = step.until(self.expr(u)?);
            }
            Ok(step)
        })();
        self.scopes.pop();
        r
    }

    fn function(&mut self, f: &FnDecl) -> LResult<Graph> {
        let inputs = f.params.iter().map(|p| self.value(&p.name, p.span)).collect::<LResult<Vec<_>>>()?;
        let outputs = f.outputs.iter().map(|o| self.expr(o)).collect::<LResult<Vec<_>>>()?;
        let mut updates = Vec::new();
        for (target, e) in &f.updates {
            let tv = self.value(&target.name, target.span)?;
            let ev = self.expr(e)?;
            if tv.ty() != ev.ty() {
                return Err(Diagnostic::new(
                    Phase::Type,
                    e.span,
                    format!("update for `{}` has type {} but the variable is {}", target.name, ev.ty(), tv.ty()),
                ));
            }
            updates.push((tv, ev));
        }
        let g = Graph::new(inputs, outputs).with_updates(updates);
        if let Err(v) = g.validate() {
            return Err(Diagnostic::new(Phase::Type, f.span, format!("function `{}`: {}", f.name.name, v.join("; "))));
        }
        Ok(g)
    }
}

/// Builds the initial value of a shared variable.
pub fn literal_tensor(lit: &Literal, dtype: DType) -> LResult<Tensor> {
    let (shape, data) = match lit {
        Literal::Number(v, _) => (vec![], vec![*v]),
        Literal::Array(..) => {
            let mut shape = Vec::new();
            let mut data = Vec::new();
            flatten(lit, 0, &mut shape, &mut data)?;
            (shape, data)
        }
        Literal::Ctor { name, args, span } => {
            let err = |m: &str| Diagnostic::new(Phase::Type, *span, format!("`{}`: {m}", name.name));
            let lead = match name.name.as_str() {
                "zeros" | "ones" => 0,
                "fill" => 1,
                "uniform" => 2,
                _ => return Err(err("unknown initializer")),
            };
            if args.len() < lead {
                return Err(err("missing arguments"));
            }
            let mut shape = Vec::new();
            for &d in &args[lead..] {
                if d.fract() != 0.0 || !(1.0..=1e9).contains(&d) {
                    return Err(err("extents must be positive integers"));
                }
                shape.push(d as usize);
            }
            let n: usize = shape.iter().product();
            if n > 1 << 22 {
                return Err(err("tensor is too large"));
            }
            let data = match name.name.as_str() {
                "zeros" => vec![0.0; n],
                "ones" => vec![1.0; n],
                "fill" => vec![args[0]; n],
                _ => {
                    let (seed, scale) = (args[0], args[1]);
                    if seed.fract() != 0.0 || seed < 0.0 || !(scale >= 0.0) {
                        return Err(err("the seed must be a non-negative integer and the scale non-negative"));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
                    (0..n).map(|_| rng.gen_range(-scale..=scale)).collect()
                }
            };
            (shape, data)
        }
    };
    if !dtype.is_float() && data.iter().any(|v| v.fract() != 0.0) {
        return Err(Diagnostic::new(Phase::Type, lit.span(), format!("{} values must be integers", dtype.name())));
    }
    Tensor::new(dtype, shape, data).map_err(|e| type_err(lit.span(), e))
}

fn flatten(lit: &Literal, depth: usize, shape: &mut Vec<usize>, data: &mut Vec<f64>) -> LResult<()> {
    let ragged = || Diagnostic::new(Phase::Type, lit.span(), "array literal is ragged");
    match lit {
        Literal::Number(v, _) => {
            if depth != shape.len() {
                return Err(ragged());
            }
            data.push(*v);
        }
        Literal::Array(items, _) => {
            if depth == shape.len() {
                if !data.is_empty() {
                    return Err(ragged());
                }
                shape.push(items.len());
            } else if depth > shape.len() || shape[depth] != items.len() {
                return Err(ragged());
            }
            for it in items {
                flatten(it, depth + 1, shape, data)?;
            }
            // An empty inner array leaves deeper extents undetermined.
            if items.is_empty() && depth + 1 < shape.len() {
                return Err(ragged());
            }
        }
        Literal::Ctor { span, .. } => {
            return Err(Diagnostic::new(Phase::Type, *span, "initializers cannot be nested inside arrays"));
        }
    }
    Ok(())
}

/// Lowers every function of a resolved program.
pub fn lower(p: &Program) -> Result<BTreeMap<String, Graph>, Diagnostic> {
    let mut l = Lowerer { scopes: vec![HashMap::new()] };
    let mut fns = BTreeMap::new();
    for d in &p.decls {
        match d {
            Decl::Input { name, dtype, dims, .. } => {
                let dims = dims.iter().map(|d| d.map_or(Dim::Unknown, Dim::Known)).collect();
                l.bind(&name.name, Binding::Value(Var::input(name.name.clone(), TensorType::new(*dtype, dims))));
            }
            Decl::Shared { name, dtype, init, .. } => {
                let t = literal_tensor(init, dtype.unwrap_or(DType::F64))?;
                l.bind(&name.name, Binding::Value(Var::shared(name.name.clone(), t)));
            }
            Decl::Let { names, value, .. } => l.let_binding(names, value)?,
            Decl::Scan(s) => l.scan(s)?,
            Decl::Fn(f) => {
                let g = l.function(f)?;
                fns.insert(f.name.name.clone(), g);
            }
        }
    }
    Ok(fns)
}
