//! Minimal neural-network toolkit used by the trajectory predictor and the
//! navigation policy: a reverse-mode tape over `ndarray` matrices, a handful of
//! layers (linear, three-layer MLP, GRU), an Adam optimizer with name-prefix
//! freezing, a binary checkpoint archive, and a finite-difference gradient
//! checker.
//!
//! Everything is `f64` end to end. Gradients are verified against central
//! finite differences in the test suites of the downstream crates, so the
//! backward pass of every op here is written to be exact rather than fast.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod store;
pub mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use layers::{Gru, GruLayer, Linear, Mlp};
pub use store::{AdamConfig, ParamStore};
pub use tape::{Tape, Var};

use thiserror::Error;

/// Errors surfaced by parameter storage and checkpoint IO.
#[derive(Debug, Error)]
pub enum NnetError {
    #[error("parameter `{0}` already registered")]
    DuplicateParam(String),
    #[error("parameter `{0}` not found")]
    MissingParam(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}
