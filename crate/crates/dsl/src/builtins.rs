//! Functions callable from expressions.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arg {
    Tensor,
    /// An integer literal such as an axis or an extent.
    Int,
    /// A numeric literal.
    Const,
}

#[derive(Debug, Clone, Copy)]
pub struct Builtin {
    pub name: &'static str,
    /// Fixed leading parameters.
    pub params: &'static [Arg],
    /// Trailing optional parameters.
    pub optional: &'static [Arg],
    /// Kind of any further arguments, for variadic functions.
    pub rest: Option<Arg>,
}

use Arg::*;

const fn f(name: &'static str, params: &'static [Arg]) -> Builtin {
    Builtin { name, params, optional: &[], rest: None }
}

pub const BUILTINS: &[Builtin] = &[
    f("neg", &[Tensor]),
    f("exp", &[Tensor]),
    f("log", &[Tensor]),
    f("log1p", &[Tensor]),
    f("sigmoid", &[Tensor]),
    f("softplus", &[Tensor]),
    f("tanh", &[Tensor]),
    f("sqr", &[Tensor]),
    f("softmax", &[Tensor]),
    f("transpose", &[Tensor]),
    f("zeros_like", &[Tensor]),
    f("dot", &[Tensor, Tensor]),
    f("maximum", &[Tensor, Tensor]),
    f("crossentropy", &[Tensor, Tensor]),
    f("concat", &[Tensor, Tensor]),
    f("if_else", &[Tensor, Tensor, Tensor]),
    Builtin { name: "sum", params: &[Tensor], optional: &[Int], rest: None },
    Builtin { name: "max", params: &[Tensor], optional: &[Int], rest: None },
    f("argmax", &[Tensor, Int]),
    f("pow", &[Tensor, Const]),
    f("index", &[Tensor, Int]),
    Builtin { name: "reshape", params: &[Tensor, Int], optional: &[], rest: Some(Int) },
    Builtin { name: "stack", params: &[Tensor], optional: &[], rest: Some(Tensor) },
];

pub fn lookup(name: &str) -> Option<&'static Builtin> {
    BUILTINS.iter().find(|b| b.name == name)
}

impl Builtin {
    /// Checks a call with `n` arguments.
    pub fn check_arity(&self, n: usize) -> Result<(), String> {
        let lo = self.params.len();
        let hi = lo + self.optional.len();
        if n < lo || (self.rest.is_none() && n > hi) {
            let want = match (self.rest, lo == hi) {
                (Some(_), _) => format!("at least {lo}"),
                (None, true) => format!("{lo}"),
                (None, false) => format!("{lo} to {hi}"),
            };
            let s = if want == "1" { "" } else { "s" };
            return Err(format!("`{}` takes {want} argument{s}, got {n}", self.name));
        }
        Ok(())
    }

    /// Kind of argument `i`.
    pub fn arg(&self, i: usize) -> Arg {
        if i < self.params.len() {
            self.params[i]
        } else if i < self.params.len() + self.optional.len() {
            self.optional[i - self.params.len()]
        } else {
            self.rest.unwrap_or(Tensor)
        }
    }
}

/// Shared-variable initializers: `zeros(d..)`, `ones(d..)`, `fill(v, d..)`,
/// `uniform(seed, scale, d..)`.
pub const CTORS: &[(&str, usize)] = &[("zeros", 0), ("ones", 0), ("fill", 1), ("uniform", 2)];
