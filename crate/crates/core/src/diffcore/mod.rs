//! Reverse-mode differentiation substrate: tensors, the define-by-run graph,
//! parameter storage with checkpoints, and the Adam optimizer.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
mod params;
mod real;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{CustomOp, Graph, Var};
pub use params::{ParamEntry, ParamStore};
pub use real::{sum_f64, Real};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
