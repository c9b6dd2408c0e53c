//! Hybrid decoding: a large frozen model encodes the prompt once, a small
//! model conditioned on that encoding does all the autoregressive work.

pub mod artifact;
pub mod autodiff;
pub mod bench;
pub mod bridge;
pub mod decoding;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
