//! Operation-guided neural data-to-text generation.
//!
//! Symbolic operations (minus, argmax) are pre-executed over a record table,
//! their results are encoded alongside the records, and a gated dual-attention
//! GRU decoder with a pointer-generator copy mechanism produces the text.
//!
//! The crate carries its own small reverse-mode differentiation engine
//! ([`tensor`]) so the whole model is trained end to end.

pub mod cli;
pub mod data;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod ops;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
