//! Schema-guided dialogue state tracking with one multi-task encoder.
//!
//! A single bidirectional transformer reads a compact rendering of the
//! preceding system actions, the user utterance, the active service schema
//! (names only) and what earlier services already know, and nine small heads
//! predict intent, requested slots, slot values and where carried-over values
//! come from.

pub mod augment;
pub mod autograd;
pub mod context;
pub mod corpus;
pub mod decoding;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod labeling;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod tokenizer;
pub mod toy;
pub mod util;

pub use error::{DstError, Result};
pub use scalar::Scalar;

/// Single-precision model, used for training and inference.
pub type Model32 = model::Model<f32>;
/// Double-precision model, used for gradient checks.
pub type Model64 = model::Model<f64>;
pub type HeadOutputs32 = model::HeadOutputs<f32>;
pub type HeadOutputs64 = model::HeadOutputs<f64>;
pub type TargetSet32 = model::TargetSet<f32>;
pub type TargetSet64 = model::TargetSet<f64>;
