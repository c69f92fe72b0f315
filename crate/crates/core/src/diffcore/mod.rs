//! Dense tensors, a differentiable computation graph, and the Adam optimizer.

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{ElemOp, Graph, Op, Var};
pub use tensor::{broadcast_shape, Tensor};
