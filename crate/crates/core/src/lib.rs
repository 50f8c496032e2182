//! Mixtures of exponential-family PCAs for binary data, with a
//! determinantal repulsion prior that pushes component subspaces apart.
//!
//! The crate is organized around a small set of value types (datasets,
//! factored components W = Υ·diag(Φ), mixture models) and free functions
//! that perform one update each. [`inference::fit`] wires them into a
//! variational EM loop; the `cli` crate exposes the same pipeline as a
//! command line tool.
//!
//! With the default `parallel` feature, per-sample work runs on a rayon
//! pool. Results are bit-identical with the feature disabled: parallel maps
//! collect into index order and every reduction happens sequentially.

pub mod components;
pub mod data;
pub mod dpp;
pub mod error;
pub mod eval;
pub mod expfam;
pub mod inference;
pub mod manifold;
pub mod parallel;
pub mod rng;

pub use error::{Error, Result};
