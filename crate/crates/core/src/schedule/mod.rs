//! Schedule trees and the transformations applied to them.

pub mod options;
pub mod transform;
pub mod tree;

use thiserror::Error;

pub use options::*;
pub use transform::*;
pub use tree::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("invalid tile size {0}: tile sizes must be positive")]
    InvalidTileSize(i64),
    #[error("no parallel member in the outermost band; cannot map to blocks")]
    NoParallelOuterBand,
    #[error("{0} threads per block exceeds the limit of 1024")]
    TooManyThreads(i64),
    #[error("invalid mapping options: {0}")]
    InvalidOptions(String),
}
