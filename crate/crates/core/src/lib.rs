//! Graph-to-text toolkit.
//!
//! Turns entity graphs (entities, typed relations, optional title) into
//! token-level graphs, encodes them with combined global and local graph
//! encoders, and decodes text with a length-penalized beam search. Training,
//! evaluation, BLEU scoring, attention-distance analysis, and a verification
//! harness (gradient checks, invariant suites, brute-force oracles) are all
//! included; the `kg2text` binary exposes the command-line surface.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
