//! Tensor comprehension compiler pipeline: TC source to schedule trees,
//! promoted kernels and their execution on an emulated GPU.

pub mod corpus;
pub mod frontend;
pub mod semantics;
pub mod polyir;
pub mod schedule;
pub mod promotion;
pub mod backend;
pub mod cache;
pub mod tuner;
pub mod pipeline;
