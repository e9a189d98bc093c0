use graphc_core::DType;

use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub decls: Vec<Decl>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ident {
    pub name: String,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decl {
    /// `input x : f64[?, 3];`
    Input { name: Ident, dtype: DType, dims: Vec<Option<usize>>, span: Span },
    /// `shared w = zeros(3, 2);`
    Shared { name: Ident, dtype: Option<DType>, init: Literal, span: Span },
    /// `let a, b = expr;`
    Let { names: Vec<Ident>, value: Expr, span: Span },
    Scan(ScanDecl),
    Fn(FnDecl),
}

impl Decl {
    pub fn span(&self) -> Span {
        match self {
            Decl::Input { span, .. } | Decl::Shared { span, .. } | Decl::Let { span, .. } => *span,
            Decl::Scan(s) => s.span,
            Decl::Fn(f) => f.span,
        }
    }
}

/// Initial value of a shared variable.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64, Span),
    Array(Vec<Literal>, Span),
    /// `zeros(d..)`, `ones(d..)`, `fill(v, d..)` or `uniform(seed, scale, d..)`.
    Ctor { name: Ident, args: Vec<f64>, span: Span },
}

impl Literal {
    pub fn span(&self) -> Span {
        match self {
            Literal::Number(_, s) | Literal::Array(_, s) | Literal::Ctor { span: s, .. } => *s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Gt,
    Lt,
    Ge,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Gt => ">",
            BinOp::Lt => "<",
            BinOp::Ge => ">=",
        }
    }

    /// Binding strength; higher binds tighter.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Gt | BinOp::Lt | BinOp::Ge => 1,
            BinOp::Add | BinOp::Sub => 2,
            BinOp::Mul | BinOp::Div => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    /// A name, possibly primed (`h'`).
    Name(String),
    /// `scan_name.state`
    Field(Ident, Ident),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Ident, Vec<Expr>),
    Grad(Box<Expr>, Vec<Ident>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanDecl {
    pub name: Ident,
    /// Sequences, by name; inside the body each name is the current slice.
    pub seqs: Vec<Ident>,
    pub inits: Vec<Expr>,
    pub states: Vec<Ident>,
    pub body: Vec<BodyStmt>,
    pub until: Option<Expr>,
    pub steps: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BodyStmt {
    Let { names: Vec<Ident>, value: Expr, span: Span },
    /// `h' = expr;`
    Next { state: Ident, value: Expr, span: Span },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnDecl {
    pub name: Ident,
    pub params: Vec<Ident>,
    pub outputs: Vec<Expr>,
    pub updates: Vec<(Ident, Expr)>,
    pub span: Span,
}
