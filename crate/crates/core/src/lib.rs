//! Dual-path multiscale/attention forecaster for lithium-ion capacity fade.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`] and [`tape`]: dense `f64` tensors and reverse-mode
//!   differentiation over a recorded operation list.
//! - [`nn`]: attention, feed-forward, positional encoding, multiscale stem,
//!   dense block, encoder block and the two-path fusion.
//! - [`model`]: the assembled network, its ablation variants and checkpoints.
//! - [`data`]: capacity CSV ingestion, normalization, windowing, splits and a
//!   synthetic degradation generator.
//! - [`train`]: Adam, early stopping and the training loop.
//! - [`eval`]: metrics, curves, end-of-life crossing and timing.

pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, ModelVariant};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
