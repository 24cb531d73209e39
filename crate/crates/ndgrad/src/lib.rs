//! Dense-tensor reverse-mode automatic differentiation, plus the optimizer
//! and learning-rate schedule shared by every model in this workspace.
//!
//! The engine is define-by-run: a forward pass records primitive operations
//! onto a fresh [`Tape`]; [`Tape::backward`] replays the recording once in
//! reverse and returns gradients for every `requires_grad` leaf. Tensors are
//! plain row-major `f64` buffers; there is no view machinery, no broadcasting
//! beyond explicit row-bias addition, and no global state. All randomness is
//! drawn from an explicitly threaded counter-based generator ([`CounterRng`]).

mod optim;
mod rng;
mod tape;
mod tensor;

pub use optim::{cosine_lr, AdamConfig, AdamState};
pub use rng::CounterRng;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

/// Errors produced by tensor construction, tape operations, and optimizers.
#[derive(Debug, thiserror::Error)]
pub enum NdError {
    /// Operand shapes are incompatible for the named primitive.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch {
        /// Primitive that rejected its operands.
        op: &'static str,
        /// Human-readable description of the offending shapes.
        detail: String,
    },
    /// An API contract was violated (e.g. backward from a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),
    /// A non-finite value surfaced where finite arithmetic was required.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An argument fell outside its documented range.
    #[error("range error: {0}")]
    Range(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, NdError>;
