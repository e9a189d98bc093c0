//! A small text language for graphc graphs.
//!
//! ```
//! let src = "input x : f64[?];\nlet z = log(1 + x);\nfn f(x) -> (z);\n";
//! let fns = graphc_dsl::compile(src).unwrap();
//! assert_eq!(fns["f"].inputs.len(), 1);
//! ```

pub mod ast;
pub mod builtins;
pub mod lexer;
pub mod lower;
pub mod parser;
pub mod printer;
pub mod resolve;
pub mod span;

use std::collections::BTreeMap;

use graphc_core::Graph;

pub use ast::Program;
pub use printer::print;
pub use span::{Diagnostic, Phase, Span};

/// Parses and resolves `src`.
pub fn parse(src: &str) -> Result<Program, Vec<Diagnostic>> {
    let p = parser::parse_syntax(src).map_err(|d| vec![d])?;
    let diags = resolve::resolve(&p);
    if diags.is_empty() {
        Ok(p)
    } else {
        Err(diags)
    }
}

/// Like [`parse`] for raw bytes. Invalid UTF-8 is reported at the first bad
/// byte; that diagnostic's span is relative to the valid prefix.
pub fn parse_bytes(src: &[u8]) -> Result<Program, Vec<Diagnostic>> {
    match std::str::from_utf8(src) {
        Ok(s) => parse(s),
        Err(e) => {
            let prefix = std::str::from_utf8(&src[..e.valid_up_to()]).unwrap_or("");
            let (line, col) = span::line_col(prefix, prefix.len());
            let sp = Span { offset: prefix.len(), len: 0, line, col };
            Err(vec![Diagnostic::new(Phase::Lex, sp, "source is not valid UTF-8")])
        }
    }
}

/// Lowers a parsed program to one graph per declared function.
pub fn lower(p: &Program) -> Result<BTreeMap<String, Graph>, Vec<Diagnostic>> {
    lower::lower(p).map_err(|d| vec![d])
}

/// [`parse`] followed by [`lower`].
pub fn compile(src: &str) -> Result<BTreeMap<String, Graph>, Vec<Diagnostic>> {
    lower(&parse(src)?)
}
