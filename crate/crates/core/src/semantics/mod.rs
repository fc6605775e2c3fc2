//! Range inference, specialization and static checks.

pub mod checks;
pub mod infer;
pub mod inst;
pub mod sym;

pub use checks::{check_bounds, check_initialization, check_inplace};
pub use infer::{infer_ranges, InferredRanges, IterRange, StmtRanges};
pub use inst::*;
pub use sym::Sym;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frontend::{CheckedDef, Span};

/// Size symbol (and index scalar) → concrete extent.
pub type SizeBinding = BTreeMap<String, i64>;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum SemanticError {
    #[error("statement {stmt}: cannot infer range of {}; add a `where` clause", iters.join(", "))]
    UnderConstrained { stmt: usize, iters: Vec<String>, span: Span },
    #[error("statement {stmt}: range of `{iter}` is ambiguous ({first} vs {second}); add a `where` clause")]
    Ambiguous { stmt: usize, iter: String, first: String, second: String, span: Span },
    #[error("empty range for `{what}`: [{lo}, {hi})")]
    EmptyRange { what: String, lo: i64, hi: i64, span: Span },
    #[error("no binding for size symbol `{symbol}`")]
    MissingBinding { symbol: String },
    #[error("statement {stmt}: in-place update of `{tensor}` reads elements other than the one written")]
    LivenessInterference { stmt: usize, tensor: String, span: Span },
    #[error("statement {stmt}: access to `{tensor}` dimension {dim} spans [{lo}, {hi}] outside extent {extent}")]
    OutOfBounds { stmt: usize, tensor: String, dim: usize, lo: i64, hi: i64, extent: i64, span: Span },
    #[error("statement {stmt}: `{tensor}` is read before it is defined")]
    UninitializedRead { stmt: usize, tensor: String, span: Span },
    #[error("statement {stmt}: subscript is not affine in the iterators")]
    NonAffineSubscript { stmt: usize, span: Span },
}

impl SemanticError {
    pub fn span(&self) -> Option<Span> {
        match self {
            SemanticError::UnderConstrained { span, .. }
            | SemanticError::Ambiguous { span, .. }
            | SemanticError::EmptyRange { span, .. }
            | SemanticError::LivenessInterference { span, .. }
            | SemanticError::OutOfBounds { span, .. }
            | SemanticError::UninitializedRead { span, .. }
            | SemanticError::NonAffineSubscript { span, .. } => Some(*span),
            SemanticError::MissingBinding { .. } => None,
        }
    }
}

/// Symbolic checks that need no sizes: inference and the in-place rule.
pub fn check_symbolic(c: &CheckedDef) -> Result<InferredRanges, SemanticError> {
    let r = infer_ranges(c)?;
    check_inplace(c, &r)?;
    Ok(r)
}

/// Full semantic pipeline down to a concrete, checked definition.
pub fn instantiate(c: &CheckedDef, sizes: &SizeBinding) -> Result<InstantiatedDef, SemanticError> {
    let r = check_symbolic(c)?;
    let mut inst = specialize(c, &r, sizes)?;
    check_bounds(&inst)?;
    check_initialization(&mut inst)?;
    Ok(inst)
}
