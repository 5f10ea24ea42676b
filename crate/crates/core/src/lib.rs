//! Optimal-transport machinery for grounding text representations in
//! visual features.
//!
//! - [`ot`]: cosine costs, balanced (proximal-point) and partial transport
//!   solvers, and an exact LP oracle.
//! - [`grounding`]: stub encoders, the grounding and projection MLPs, the
//!   matching head, and hand-written reverse-mode gradients.
//! - [`objectives`]: image-sentence matching, transport alignment loss,
//!   negative sampling.
//! - [`harness`]: synthetic data, AdamW, training and evaluation loops.
//! - [`io`]: embedding files, run configuration, checkpoints.

pub mod cli;
pub mod error;
pub mod grounding;
pub mod harness;
pub mod io;
pub mod objectives;
pub mod ot;
pub mod rng;

pub use error::{Error, Result};
