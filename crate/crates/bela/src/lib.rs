//! End-to-end entity linking: mention detection, bi-encoder disambiguation
//! against a dense entity index, and a rejection gate, with staged training
//! and sliding-window inference over long passages.
//!
//! The numeric kernels and the per-head parameter types are generic over the
//! scalar type (`f32` or `f64` via [`scalar::Scalar`]); the assembled model
//! and the pipeline run in `f64` with `f32` on-disk storage.

pub mod data;
pub mod ed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod index;
pub mod manifest;
pub mod md;
pub mod model;
pub mod num;
pub mod pipeline;
pub mod rejection;
pub mod scalar;
pub mod train;

pub use error::{BelaError, Result};

/// Scalar type used by the assembled model and pipeline.
pub type Real = f64;
/// Mention-detection head at the default precision.
pub type MdHead = md::MdParams<Real>;
/// Disambiguation pooling head at the default precision.
pub type EdHead = ed::EdParams<Real>;
/// Rejection head at the default precision.
pub type RHead = rejection::RParams<Real>;
