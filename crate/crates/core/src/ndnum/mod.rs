//! Dense tensors, a reverse-mode differentiable graph, counter-based random
//! numbers and finite-difference gradient checks.

mod gradcheck;
mod graph;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_leaves, GradCheckError, GradCheckReport};
pub use graph::{Feeds, Feeds64, Gradients, Graph, GraphError, NodeId, Op};
pub use rng::{streams, Rng};
pub use tensor::{Real, Tensor, Tensor64, TensorError};

pub(crate) use tensor::kernels;
