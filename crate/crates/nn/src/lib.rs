//! Minimal CPU building blocks for convolutional networks: layers with
//! explicit forward caches and hand-written backward passes, optimizers,
//! and a named-tensor checkpoint archive.
//!
//! Everything is generic over [`Float`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference gradient checks.
//!
//! Batch-level work is dispatched through [`exec`], which uses rayon when the
//! `parallel` feature is enabled and plain iteration otherwise. Both paths
//! produce bitwise-identical results because partial results are always
//! reduced in a fixed order.

pub mod archive;
pub mod exec;
mod float;
mod im2col;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
mod param;

pub use float::Float;
pub use layers::{Cache, Layer, Mode};
pub use param::{Param, StateMut, StateRef};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("archive format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
