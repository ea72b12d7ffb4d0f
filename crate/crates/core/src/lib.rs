//! Anchor-based attention for a tiny decoder-only transformer.
//!
//! Sequences of text are closed by anchor tokens. Training with anchor
//! masks teaches the model to summarise each sequence into its anchor, and
//! at inference the keys/values of non-anchor tokens from finished
//! sequences are discarded from the cache.

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod infer;
pub mod kvfile;
pub mod mask;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
