//! Token-wise coarse-to-fine conditional flow matching for autoregressive
//! generation of continuous frame sequences.
//!
//! A causal transformer ([`conditioner`]) turns symbols, a style prompt, and
//! the frames emitted so far into a condition vector per step. Each frame is
//! then produced by two flow-matching stages ([`c2f`]): a coarse stage over the
//! even-indexed features and a fine stage over the residual, both starting
//! from a Gaussian centred on the previous frame. [`tasks`] supplies toy data
//! with exact oracles, [`train`] the joint objective, and [`eval`] held-out
//! metrics and sweeps.

pub mod c2f;
pub mod conditioner;
mod error;
pub mod eval;
pub mod flow;
mod frames;
pub mod model;
pub mod tasks;
pub mod train;

pub use error::{CoreError, Result};
pub use frames::FrameSequence;
pub use tokenflow_autodiff as autodiff;
