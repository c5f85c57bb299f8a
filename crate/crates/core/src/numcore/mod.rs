//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Graph, LeafKind, NodeId};
pub use tensor::{cosine, dot, l2, Tensor};
