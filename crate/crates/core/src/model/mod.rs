//! Tiny transformers in three shapes: bidirectional encoder,
//! encoder-decoder and decoder-only. Pre-norm blocks, learned absolute
//! positions, untied input embedding and output head.

pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod infer;
pub mod runner;

pub use checkpoint::{Checkpoint, CheckpointConfig, Role};
pub use config::{Arch, ModelConfig};
pub use forward::{full_forward, TapeModel};
pub use infer::{decoder_step, encoder_forward, Flops, KvCache, ModelView};
pub use runner::{PlainModel, RunState, Runner};
