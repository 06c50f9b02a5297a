//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod graph;
pub mod gradcheck;
mod param;
mod tensor;

pub use graph::{Graph, Var, LOG_CLAMP};
pub use param::{Param, ParamId, ParamStore};
pub use tensor::Tensor;
