//! Compact reverse-mode automatic differentiation on dense `f64` tensors.
//!
//! The design is a classic tape: a [`Graph`] records every operation during
//! the forward pass, and [`Graph::backward`] walks the tape in reverse,
//! accumulating gradients additively into every node that requires them.
//! Trainable tensors live in a [`ParamStore`] under stable names; a graph
//! borrows their current values as leaves and scatters gradients back after
//! the backward pass.
//!
//! Everything is 64-bit and single-threaded per graph: identical graphs yield
//! bitwise-identical gradients. Any non-finite forward value aborts the step
//! with an error naming the offending op.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{eval_scalar, grad_check};
pub use graph::{Graph, VarId};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors produced by graph construction, backward passes, the parameter
/// store, and checkpoint I/O.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("`{op}` expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("non-finite value produced by op `{op}`")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {got:?}")]
    NonScalarLoss { got: Vec<usize> },
    #[error("parameter `{0}` is already registered")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, AdError>;
