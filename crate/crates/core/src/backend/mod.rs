//! Kernel IR, lowering, the reference interpreter, the GPU emulator,
//! CUDA-dialect text and tensor files.

pub mod cuda;
pub mod emulate;
pub mod interp;
pub mod ir;
pub mod lower;
pub mod tensor_io;
pub mod value;

use thiserror::Error;

pub use cuda::emit_cuda_text;
pub use emulate::{emulate, EmulationResult, Race, BARRIER_COST};
pub use interp::run_reference;
pub use ir::{Cond, IExpr, KStmt, KernelIR, LoweredBuffer};
pub use lower::lower;
pub use tensor_io::{read_tensor, write_tensor, TENSOR_MAGIC};
pub use value::{Bindings, Tensor, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("{stmt}: index {index:?} out of range for {tensor} with shape {shape:?}")]
    IndexOutOfRange { stmt: String, tensor: String, index: Vec<i64>, shape: Vec<usize> },
    #[error("threads of block {block:?} reach different barrier sequences")]
    BarrierDivergence { block: Vec<i64> },
    #[error("access at {index:?} falls outside promoted buffer {buffer}")]
    PromotionOutOfTile { buffer: String, index: Vec<i64> },
    #[error("tensor {tensor}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { tensor: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("malformed tensor file: {0}")]
    BadTensorFile(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BackendError {
    fn from(e: std::io::Error) -> Self {
        BackendError::Io(e.to_string())
    }
}
