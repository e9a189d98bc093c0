//! Recursive-descent parser. Stops at the first syntax error.

use graphc_core::DType;

use crate::ast::*;
use crate::lexer::{lex, Kw, Tok, Token};
use crate::span::{Diagnostic, Phase, Span};

/// Deepest expression nesting accepted; keeps hostile input off the stack.
pub const MAX_DEPTH: usize = 64;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn prev_span(&self) -> Span {
        self.toks[self.pos.saturating_sub(1)].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, what: &str) -> PResult<T> {
        Err(Diagnostic::new(Phase::Parse, self.span(), format!("expected {what}, found {}", self.peek().describe())))
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> PResult<Span> {
        if *self.peek() == t {
            Ok(self.bump().span)
        } else {
            self.error(what)
        }
    }

    fn ident(&mut self) -> PResult<Ident> {
        match self.peek().clone() {
            Tok::Ident(name) => {
                let span = self.bump().span;
                Ok(Ident { name, span })
            }
            _ => self.error("a name"),
        }
    }

    fn ident_list(&mut self) -> PResult<Vec<Ident>> {
        let mut out = vec![self.ident()?];
        while self.eat(&Tok::Comma) {
            out.push(self.ident()?);
        }
        Ok(out)
    }

    fn program(&mut self) -> PResult<Program> {
        let mut decls = Vec::new();
        while *self.peek() != Tok::Eof {
            decls.push(self.decl()?);
        }
        Ok(Program { decls })
    }

    fn decl(&mut self) -> PResult<Decl> {
        let start = self.span();
        match self.peek() {
            Tok::Kw(Kw::Input) => {
                self.bump();
                let name = self.ident()?;
                self.expect(Tok::Colon, "`:`")?;
                let dtype = self.dtype()?;
                self.expect(Tok::LBracket, "`[`")?;
                let mut dims = Vec::new();
                if *self.peek() != Tok::RBracket {
                    loop {
                        dims.push(self.dim()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket, "`,` or `]`")?;
                let end = self.expect(Tok::Semi, "`;`")?;
                Ok(Decl::Input { name, dtype, dims, span: start.to(end) })
            }
            Tok::Kw(Kw::Shared) => {
                self.bump();
                let name = self.ident()?;
                let dtype = if self.eat(&Tok::Colon) { Some(self.dtype()?) } else { None };
                self.expect(Tok::Eq, "`=`")?;
                let init = self.literal(0)?;
                let end = self.expect(Tok::Semi, "`;`")?;
                Ok(Decl::Shared { name, dtype, init, span: start.to(end) })
            }
            Tok::Kw(Kw::Let) => {
                self.bump();
                let names = self.ident_list()?;
                self.expect(Tok::Eq, "`=`")?;
                let value = self.expr()?;
                let end = self.expect(Tok::Semi, "`;`")?;
                Ok(Decl::Let { names, value, span: start.to(end) })
            }
            Tok::Kw(Kw::Scan) => self.scan(start).map(Decl::Scan),
            Tok::Kw(Kw::Fn) => self.function(start).map(Decl::Fn),
            _ => self.error("a declaration (`input`, `shared`, `let`, `scan` or `fn`)"),
        }
    }

    fn dtype(&mut self) -> PResult<DType> {
        let id = self.ident()?;
        DType::parse(&id.name)
            .ok_or_else(|| Diagnostic::new(Phase::Parse, id.span, format!("unknown dtype `{}`; use f64, f32 or i64", id.name)))
    }

    fn dim(&mut self) -> PResult<Option<usize>> {
        match *self.peek() {
            Tok::Question => {
                self.bump();
                Ok(None)
            }
            Tok::Number(v) if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 => {
                self.bump();
                Ok(Some(v as usize))
            }
            Tok::Number(_) => Err(Diagnostic::new(Phase::Parse, self.span(), "extent must be a positive integer")),
            _ => self.error("an extent or `?`"),
        }
    }

    fn signed_number(&mut self) -> PResult<f64> {
        let neg = self.eat(&Tok::Minus);
        match *self.peek() {
            Tok::Number(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => self.error("a number"),
        }
    }

    fn literal(&mut self, depth: usize) -> PResult<Literal> {
        if depth > MAX_DEPTH {
            return Err(Diagnostic::new(Phase::Parse, self.span(), "literal nested too deeply"));
        }
        let start = self.span();
        match self.peek() {
            Tok::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if *self.peek() != Tok::RBracket {
                    loop {
                        items.push(self.literal(depth + 1)?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                let end = self.expect(Tok::RBracket, "`,` or `]`")?;
                Ok(Literal::Array(items, start.to(end)))
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                self.expect(Tok::LParen, "`(`")?;
                let mut args = Vec::new();
                if *self.peek() != Tok::RParen {
                    loop {
                        args.push(self.signed_number()?);
                        if !self.eat(&Tok::Comma) {
                            break;
                        }
                    }
                }
                let end = self.expect(Tok::RParen, "`,` or `)`")?;
                Ok(Literal::Ctor { name, args, span: start.to(end) })
            }
            _ => {
                let v = self.signed_number()?;
                Ok(Literal::Number(v, start.to(self.prev_span())))
            }
        }
    }

    fn scan(&mut self, start: Span) -> PResult<ScanDecl> {
        self.bump();
        let name = self.ident()?;
        let seqs = if self.eat(&Tok::Kw(Kw::Over)) { self.ident_list()? } else { Vec::new() };
        self.expect(Tok::Kw(Kw::From), "`from`")?;
        let mut inits = vec![self.expr()?];
        while self.eat(&Tok::Comma) {
            inits.push(self.expr()?);
        }
        self.expect(Tok::LBrace, "`{`")?;
        self.expect(Tok::Kw(Kw::State), "`state`")?;
        let states = self.ident_list()?;
        self.expect(Tok::Semi, "`;`")?;
        let mut body = Vec::new();
        while *self.peek() != Tok::RBrace {
            let s = self.span();
            if self.eat(&Tok::Kw(Kw::Let)) {
                let names = self.ident_list()?;
                self.expect(Tok::Eq, "`=`")?;
                let value = self.expr()?;
                let end = self.expect(Tok::Semi, "`;`")?;
                body.push(BodyStmt::Let { names, value, span: s.to(end) });
            } else if matches!(self.peek(), Tok::Ident(n) if n.ends_with('\'')) {
                let state = self.ident()?;
                self.expect(Tok::Eq, "`=`")?;
                let value = self.expr()?;
                let end = self.expect(Tok::Semi, "`;`")?;
                body.push(BodyStmt::Next { state, value, span: s.to(end) });
            } else {
                return self.error("`let`, a primed state update such as `h' = ...`, or `}`");
            }
        }
        let mut end = self.expect(Tok::RBrace, "`}`")?;
        let until = if self.eat(&Tok::Kw(Kw::Until)) { Some(self.expr()?) } else { None };
        let steps = if self.eat(&Tok::Kw(Kw::Steps)) { Some(self.expr()?) } else { None };
        if *self.peek() == Tok::Semi {
            end = self.bump().span;
        } else if let Some(e) = steps.as_ref().or(until.as_ref()) {
            end = e.span;
        }
        Ok(ScanDecl { name, seqs, inits, states, body, until, steps, span: start.to(end) })
    }

    fn function(&mut self, start: Span) -> PResult<FnDecl> {
        self.bump();
        let name = self.ident()?;
        self.expect(Tok::LParen, "`(`")?;
        let params = if *self.peek() == Tok::RParen { Vec::new() } else { self.ident_list()? };
        self.expect(Tok::RParen, "`,` or `)`")?;
        self.expect(Tok::Arrow, "`->`")?;
        self.expect(Tok::LParen, "`(`")?;
        let mut outputs = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                outputs.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`,` or `)`")?;
        let mut updates = Vec::new();
        if self.eat(&Tok::Kw(Kw::Updates)) {
            loop {
                let target = self.ident()?;
                self.expect(Tok::LArrow, "`<-`")?;
                updates.push((target, self.expr()?));
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let end = self.expect(Tok::Semi, "`;`")?;
        Ok(FnDecl { name, params, outputs, updates, span: start.to(end) })
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(Diagnostic::new(Phase::Parse, self.span(), "expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let lhs = self.additive()?;
        let op = match self.peek() {
            Tok::Gt => BinOp::Gt,
            Tok::Lt => BinOp::Lt,
            Tok::Ge => BinOp::Ge,
            _ => {
                self.depth -= 1;
                return Ok(lhs);
            }
        };
        self.bump();
        let rhs = self.additive()?;
        if matches!(self.peek(), Tok::Gt | Tok::Lt | Tok::Ge) {
            return Err(Diagnostic::new(Phase::Parse, self.span(), "comparisons do not chain; add parentheses"));
        }
        self.depth -= 1;
        let span = lhs.span.to(rhs.span);
        Ok(Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span })
    }

    fn additive(&mut self) -> PResult<Expr> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.multiplicative()?;
            let span = lhs.span.to(rhs.span);
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span };
        }
    }

    fn multiplicative(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            let span = lhs.span.to(rhs.span);
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span };
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Minus {
            let start = self.bump().span;
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            let span = start.to(inner.span);
            return Ok(Expr { kind: ExprKind::Neg(Box::new(inner)), span });
        }
        self.primary()
    }

    fn args(&mut self) -> PResult<(Vec<Expr>, Span)> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                args.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        let end = self.expect(Tok::RParen, "`,` or `)`")?;
        Ok((args, end))
    }

    fn primary(&mut self) -> PResult<Expr> {
        let start = self.span();
        match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                Ok(Expr { kind: ExprKind::Number(v), span: start })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                let end = self.expect(Tok::RParen, "`)`")?;
                Ok(Expr { span: start.to(end), ..inner })
            }
            Tok::Kw(Kw::Grad) => {
                self.bump();
                self.expect(Tok::LParen, "`(`")?;
                let cost = self.expr()?;
                self.expect(Tok::Comma, "`,` and the names to differentiate with respect to")?;
                let wrt = self.ident_list()?;
                let end = self.expect(Tok::RParen, "`,` or `)`")?;
                Ok(Expr { kind: ExprKind::Grad(Box::new(cost), wrt), span: start.to(end) })
            }
            Tok::Ident(_) => {
                let id = self.ident()?;
                if *self.peek() == Tok::LParen {
                    let (args, end) = self.args()?;
                    return Ok(Expr { kind: ExprKind::Call(id, args), span: start.to(end) });
                }
                if *self.peek() == Tok::Dot && matches!(self.peek_at(1), Tok::Ident(_)) {
                    self.bump();
                    let field = self.ident()?;
                    let span = start.to(field.span);
                    return Ok(Expr { kind: ExprKind::Field(id, field), span });
                }
                Ok(Expr { kind: ExprKind::Name(id.name), span: id.span })
            }
            _ => self.error("an expression"),
        }
    }
}

/// Parses `src` without resolving names.
pub fn parse_syntax(src: &str) -> Result<Program, Diagnostic> {
    let toks = lex(src)?;
    Parser { toks, pos: 0, depth: 0 }.program()
}
