//! Error types shared across the crate.

use thiserror::Error;

use crate::parse::SourceSpan;

/// A syntax or resolution error produced while parsing a program or fact file.
#[derive(Debug, Clone, Error)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
}

/// A validation finding. Validation never fails hard; it reports diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// Index of the offending rule in `Program::rules`, when applicable.
    pub rule: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.rule {
            Some(r) => write!(f, "rule #{}: {}", r, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Negation occurs inside a recursive predicate cycle.
#[derive(Debug, Clone, Error)]
#[error(
    "negation occurs within recursion: rule #{rule} negates `{negated}`, which is mutually recursive with `{head}`"
)]
pub struct StratificationError {
    pub rule: usize,
    pub head: String,
    pub negated: String,
}

/// A runtime failure while evaluating rules.
#[derive(Debug, Clone, Error)]
pub enum EvalError {
    #[error("functor `@{name}`: {message}")]
    Functor { name: String, message: String },
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("internal error: {0}")]
    Internal(String),
}
