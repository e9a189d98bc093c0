//! Scalar functions mapped by elementwise ops, and fused composites of them.

use std::fmt;
use std::hash::{Hash, Hasher};

/// The per-element function of an elementwise op.
#[derive(Debug, Clone, Copy)]
pub enum ScalarOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Log1p,
    Sigmoid,
    Softplus,
    Tanh,
    Sqr,
    /// Power with a constant exponent.
    Pow(f64),
    Maximum,
    /// Comparisons yield 1.0 or 0.0.
    Gt,
    Lt,
    Ge,
}

impl PartialEq for ScalarOp {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ScalarOp::Pow(a), ScalarOp::Pow(b)) => a.to_bits() == b.to_bits(),
            _ => std::mem::discriminant(self) == std::mem::discriminant(other),
        }
    }
}

impl Eq for ScalarOp {}

impl Hash for ScalarOp {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        if let ScalarOp::Pow(c) = self {
            c.to_bits().hash(state);
        }
    }
}

/// Saturation bound of the logistic function; beyond it the result is
/// exactly 0 or 1.
const SIGMOID_SATURATION: f64 = 30.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x < -SIGMOID_SATURATION {
        0.0
    } else if x > SIGMOID_SATURATION {
        1.0
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// log(1 + exp(x)) without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl ScalarOp {
    pub fn arity(self) -> usize {
        use ScalarOp::*;
        match self {
            Add | Sub | Mul | Div | Maximum | Gt | Lt | Ge => 2,
            Neg | Exp | Log | Log1p | Sigmoid | Softplus | Tanh | Sqr | Pow(_) => 1,
        }
    }

    pub fn name(self) -> &'static str {
        use ScalarOp::*;
        match self {
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Div => "div",
            Neg => "neg",
            Exp => "exp",
            Log => "log",
            Log1p => "log1p",
            Sigmoid => "sigmoid",
            Softplus => "softplus",
            Tanh => "tanh",
            Sqr => "sqr",
            Pow(_) => "pow",
            Maximum => "maximum",
            Gt => "gt",
            Lt => "lt",
            Ge => "ge",
        }
    }

    /// Whether the result is always floating point, even for integer operands.
    pub fn forces_float(self) -> bool {
        use ScalarOp::*;
        matches!(self, Div | Exp | Log | Log1p | Sigmoid | Softplus | Tanh | Pow(_))
    }

    #[inline]
    pub fn apply1(self, a: f64) -> f64 {
        use ScalarOp::*;
        match self {
            Neg => -a,
            Exp => a.exp(),
            Log => a.ln(),
            Log1p => a.ln_1p(),
            Sigmoid => sigmoid(a),
            Softplus => softplus(a),
            Tanh => a.tanh(),
            Sqr => a * a,
            Pow(c) => a.powf(c),
            _ => f64::NAN,
        }
    }

    #[inline]
    pub fn apply2(self, a: f64, b: f64) -> f64 {
        use ScalarOp::*;
        match self {
            Add => a + b,
            Sub => a - b,
            Mul => a * b,
            Div => a / b,
            Maximum => {
                if a >= b || b.is_nan() {
                    a
                } else {
                    b
                }
            }
            Gt => (a > b) as u8 as f64,
            Lt => (a < b) as u8 as f64,
            Ge => (a >= b) as u8 as f64,
            _ => f64::NAN,
        }
    }

    #[inline]
    pub fn apply(self, args: &[f64]) -> f64 {
        if self.arity() == 1 {
            self.apply1(args[0])
        } else {
            self.apply2(args[0], args[1])
        }
    }
}

impl fmt::Display for ScalarOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarOp::Pow(c) => write!(f, "pow{c}"),
            other => f.write_str(other.name()),
        }
    }
}

/// Operand of a composite instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    /// Composite input.
    Input(usize),
    /// Result of an earlier instruction.
    Reg(usize),
    /// Inline scalar constant (stored as bits for hashing).
    Const(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instr {
    pub op: ScalarOp,
    pub args: Vec<Operand>,
}

/// A pure scalar expression over `n_inputs` inputs, evaluated per element by
/// the fused elementwise kernel. The result is the last instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Composite {
    pub n_inputs: usize,
    pub instrs: Vec<Instr>,
}

impl Composite {
    /// Evaluates the body on one element. `regs` is scratch space.
    #[inline]
    pub fn eval(&self, inputs: &[f64], regs: &mut Vec<f64>) -> f64 {
        regs.clear();
        let mut args = [0.0f64; 2];
        for ins in &self.instrs {
            for (slot, a) in args.iter_mut().zip(&ins.args) {
                *slot = match *a {
                    Operand::Input(i) => inputs[i],
                    Operand::Reg(r) => regs[r],
                    Operand::Const(bits) => f64::from_bits(bits),
                };
            }
            regs.push(ins.op.apply(&args[..ins.args.len()]));
        }
        regs.last().copied().unwrap_or(f64::NAN)
    }

    pub fn forces_float(&self) -> bool {
        self.instrs.iter().any(|i| i.op.forces_float())
    }

    /// How many instructions apply `op`.
    pub fn count_op(&self, op: ScalarOp) -> usize {
        self.instrs.iter().filter(|i| i.op == op).count()
    }

    pub fn name(&self) -> String {
        let parts: Vec<String> = self.instrs.iter().map(|i| i.op.to_string()).collect();
        format!("composite{{{}}}", parts.join(","))
    }
}
