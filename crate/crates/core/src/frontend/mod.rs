//! The `.vnns` specification language: lexer, parser, pretty-printer and
//! type checker.

pub mod ast;
mod lexer;
mod parser;
mod pretty;
pub mod types;
mod typecheck;

pub use ast::*;
pub use parser::{parse, parse_expr};
pub use pretty::{pretty, pretty_expr};
pub use typecheck::{typecheck, DimObligation, Global, TypedModule};
pub use types::{Dim, Ty};

use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: Span,
    pub message: String,
    /// Human-readable descriptions of what would have been accepted.
    pub expected: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{span}: {message}")]
pub struct TypeError {
    pub span: Span,
    pub message: String,
}

/// Parses and type-checks in one go, rendering all diagnostics as text.
pub fn load_spec(src: &str) -> Result<TypedModule, Vec<String>> {
    let module = parse(src).map_err(|e| vec![e.to_string()])?;
    typecheck(&module).map_err(|errs| errs.iter().map(ToString::to_string).collect())
}
