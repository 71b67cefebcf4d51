//! Dense-tensor arithmetic with reverse-mode differentiation.
//!
//! Everything is 64-bit and deterministic: a seeded [`ParamStore`] plus a
//! [`Tape`] recording one forward pass. Models build their graphs from the
//! tape primitives, call [`Tape::backward`], and hand the gradients to the
//! optimizer. [`gradcheck`] verifies any such graph against central finite
//! differences.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    check_gradients, compare_grad_maps, fd_gradients, rel_error, GradCheckReport, FD_EPSILON,
};
pub use params::{GradMap, ParamStore, INIT_RANGE};
pub use tape::{argmax, softmax_values, LstmState, NodeId, Tape};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },
    #[error("{context}: expected a scalar")]
    NotScalar { context: String },
    #[error("{context}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        context: String,
        index: usize,
        len: usize,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("duplicate parameter '{name}'")]
    DuplicateParam { name: String },
    #[error("unknown parameter '{name}'")]
    UnknownParam { name: String },
    #[error("contract violation: {context}")]
    Contract { context: String },
}
