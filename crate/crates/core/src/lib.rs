//! Transformer Hawkes process over asynchronous event sequences.
//!
//! The crate is `no_std` with `alloc`. It contains a small reverse-mode
//! autodiff tape over dense row-major matrices, the continuous-time
//! self-attention encoder, the softplus conditional intensity, the sequence
//! log-likelihood with Monte Carlo and trapezoidal non-event estimators,
//! a classical exponential Hawkes simulator and closed-form likelihood used as
//! an oracle, Adam, and the training/evaluation loop.
//!
//! File formats, model archives and the command-line tool live in the `thp`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod embedding;
pub mod encoder;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod hawkes;
pub mod intensity;
pub mod likelihood;
pub(crate) mod math;
pub mod model;
pub mod optim;
pub mod predict;
pub mod rng;
pub mod sequence;
pub mod split;
pub mod train;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{Error, Result};
pub use model::{ModelConfig, ParamId, ParamStore, Thp};
pub use graph::RelationalGraph;
pub use sequence::{Event, EventSequence};
