//! Minimal dense reverse-mode automatic differentiation.
//!
//! Only the op set the caption decoder needs is provided. All values are
//! `f64`; a graph is built per forward pass and discarded afterwards.

mod gradcheck;
mod graph;
mod ops;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, MAX_CHECK_ENTRIES};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::{forward, Axis, Op};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a 2-D tensor, got shape {shape:?}")]
    NotAMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("invalid shape {shape:?}")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("unknown node {node}")]
    UnknownNode { node: usize },
    #[error("{0}")]
    InvalidArgument(String),
}
