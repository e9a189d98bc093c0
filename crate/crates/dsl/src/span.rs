use std::fmt;

/// A byte range in the source with its 1-based line and column.
///
/// Spans never take part in AST equality, so two parses of equivalent text
/// compare equal however it was laid out.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span {
    pub offset: usize,
    pub len: usize,
    pub line: usize,
    pub col: usize,
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

impl Span {
    /// Smallest span covering both.
    pub fn to(self, end: Span) -> Span {
        let stop = (end.offset + end.len).max(self.offset + self.len);
        Span { len: stop - self.offset, ..self }
    }

    pub fn end(self) -> usize {
        self.offset + self.len
    }

    /// Whether the span lies inside `src` and its line and column agree with
    /// its offset.
    pub fn is_valid_in(&self, src: &str) -> bool {
        if self.end() > src.len() || !src.is_char_boundary(self.offset) || !src.is_char_boundary(self.end()) {
            return false;
        }
        let (line, col) = line_col(src, self.offset);
        line == self.line && col == self.col
    }
}

/// 1-based line and column (in characters) of byte `offset`.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset];
    let line = before.matches('\n').count() + 1;
    let start = before.rfind('\n').map_or(0, |i| i + 1);
    (line, before[start..].chars().count() + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Lex,
    Parse,
    Resolve,
    Type,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub span: Span,
    pub phase: Phase,
    pub message: String,
}

impl Diagnostic {
    pub fn new(phase: Phase, span: Span, message: impl Into<String>) -> Diagnostic {
        Diagnostic { span, phase, message: message.into() }
    }

    /// `file:line:col: message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}:{}: {}", self.span.line, self.span.col, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.span.line, self.span.col, self.message)
    }
}

impl std::error::Error for Diagnostic {}
