//! Dense `f64` tensors with tape-based reverse-mode differentiation and Adam.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it once in reverse. Parameters live in a [`ParamStore`] and are copied
//! onto the tape per pass, so gradients accumulate in the store until the
//! caller zeroes them.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op}: invalid domain: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid tape state: {0}")]
    State(String),
}
