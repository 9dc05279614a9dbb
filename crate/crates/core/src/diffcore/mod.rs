//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! Only scalar-with-tensor broadcasting exists; row and column tiling are
//! explicit ops (`repeat_rows`, `repeat_cols`). Reductions run left to right
//! so results are bit-reproducible.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use graph::{sigmoid, softmax_slice, softplus, Gradients, Graph, Var};
pub use optim::Momentum;
pub use tensor::Tensor;
