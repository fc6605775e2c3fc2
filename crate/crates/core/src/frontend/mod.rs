//! Lexing, parsing and name resolution for the TC language.

pub mod ast;
pub mod lexer;
pub mod names;
pub mod parser;
pub mod pretty;

pub use ast::*;
pub use lexer::{lex, Tok, Token};
pub use names::{validate_def, validate_program, CheckedDef, NameKind, TensorInfo, TensorRole};
pub use parser::parse;
pub use pretty::{expr_text, pretty_def, pretty_print, stmt_text};

use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FrontendError {
    #[error("unknown character `{ch}`")]
    UnknownCharacter { ch: char, span: Span },
    #[error("syntax error: {message}")]
    Syntax { message: String, span: Span },
    #[error("calling another TC function (`{callee}`) is not supported")]
    TcCallUnsupported { callee: String, span: Span },
    #[error("duplicate definition of `{name}`")]
    DuplicateDef { name: String, span: Span },
    #[error("duplicate parameter or return `{name}`")]
    DuplicateParam { name: String, span: Span },
    #[error("unknown tensor or builtin `{name}`")]
    UnknownTensor { name: String, span: Span },
    #[error("`{name}` clashes: {what}")]
    NameClash { name: String, what: &'static str, span: Span },
    #[error("return `{name}` is never written")]
    ReturnNeverWritten { name: String, span: Span },
    #[error("input `{name}` cannot be written")]
    WriteToInput { name: String, span: Span },
    #[error("`{name}` expects {expected} arguments, found {found}")]
    ArityMismatch { name: String, expected: usize, found: usize, span: Span },
    #[error("index `{name}` repeated")]
    DuplicateIndex { name: String, span: Span },
    #[error("integer tensor `{name}` may only be used inside subscripts")]
    IntTensorAsValue { name: String, span: Span },
    #[error("`where` bound may only use size symbols and constants, found `{name}`")]
    InvalidWhereBound { name: String, span: Span },
    #[error("`where` constrains `{name}`, which the statement does not use")]
    UnusedWhere { name: String, span: Span },
}

impl FrontendError {
    pub fn span(&self) -> Span {
        match self {
            FrontendError::UnknownCharacter { span, .. }
            | FrontendError::Syntax { span, .. }
            | FrontendError::TcCallUnsupported { span, .. }
            | FrontendError::DuplicateDef { span, .. }
            | FrontendError::DuplicateParam { span, .. }
            | FrontendError::UnknownTensor { span, .. }
            | FrontendError::NameClash { span, .. }
            | FrontendError::ReturnNeverWritten { span, .. }
            | FrontendError::WriteToInput { span, .. }
            | FrontendError::ArityMismatch { span, .. }
            | FrontendError::DuplicateIndex { span, .. }
            | FrontendError::IntTensorAsValue { span, .. }
            | FrontendError::InvalidWhereBound { span, .. }
            | FrontendError::UnusedWhere { span, .. } => *span,
        }
    }
}

/// `file:line:col: message`
pub fn diagnostic(file: &str, span: Span, message: &str) -> String {
    format!("{}:{}:{}: {}", file, span.line, span.col, message)
}

pub fn parse_program(source: &str) -> Result<TcProgram, FrontendError> {
    parse(lex(source)?)
}

/// Parse and resolve names of every definition.
pub fn check_program(source: &str) -> Result<Vec<CheckedDef>, FrontendError> {
    validate_program(&parse_program(source)?)
}
