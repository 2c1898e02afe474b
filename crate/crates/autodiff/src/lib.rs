//! Minimal dense-tensor math with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] borrows a frozen [`ParamStore`] and records every operation it
//! evaluates. Calling [`Graph::backward`] on a scalar output walks the tape in
//! reverse and returns [`Gradients`], which the caller folds back into the
//! store before taking an [`ParamStore::adam_step`]. Because graphs only hold
//! a shared reference to the parameters, any number of forward passes can run
//! concurrently over the same store.

mod checkpoint;
mod error;
mod graph;
pub mod gradcheck;
pub mod nn;
mod params;
mod real;
mod tensor;

pub use checkpoint::{peek_precision, Checkpoint, CheckpointTensor, CHECKPOINT_FORMAT_VERSION};
pub use error::{AutodiffError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{AdamConfig, ParamId, ParamStore};
pub use real::{Precision, Real};
pub use tensor::Tensor;
