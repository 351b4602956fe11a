//! Dense tensors and a tape-style reverse-mode differentiation engine.
//!
//! Every model in this crate builds a fresh [`Graph`] per evaluation,
//! reads the forward values it needs and, when training, calls
//! [`Graph::backward`] on the scalar loss.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{central_difference, grad_check};
pub use graph::{log1m_exp, log_sigmoid, log_sum_exp, sigmoid, Gradients, Graph, NodeId, Op};
pub use tensor::Tensor;


use thiserror::Error;

/// Clamp window applied to exponentiated scale logits.
pub const EXP_CLAMP: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward root must hold one value, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite function value {value} at coordinate {coord:?}")]
    NonFinite { value: f64, coord: Option<usize> },
}
