use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    EncoderOnly,
    EncoderDecoder,
    DecoderOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    #[default]
    LearnedAbsolute,
}

/// Architecture hyperparameters. `n_layers` counts blocks per stack.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default)]
    pub positional: Positional,
}

impl ModelConfig {
    pub fn new(arch: Arch, d_model: usize, n_layers: usize, n_heads: usize, vocab_size: usize, max_seq_len: usize) -> Self {
        Self {
            arch,
            d_model,
            n_layers,
            n_heads,
            d_ff: 4 * d_model,
            vocab_size,
            max_seq_len,
            positional: Positional::LearnedAbsolute,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::contract(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 {
            return Err(Error::contract("n_layers must be at least 1"));
        }
        if self.d_ff == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::contract("d_ff, vocab_size and max_seq_len must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn has_encoder(&self) -> bool {
        matches!(self.arch, Arch::EncoderOnly | Arch::EncoderDecoder)
    }

    pub fn has_decoder(&self) -> bool {
        matches!(self.arch, Arch::EncoderDecoder | Arch::DecoderOnly)
    }

    fn attn_params(&self) -> u64 {
        let d = self.d_model as u64;
        4 * (d * d + d)
    }

    fn mlp_params(&self) -> u64 {
        let (d, f) = (self.d_model as u64, self.d_ff as u64);
        2 * d * f + f + d
    }

    fn ln_params(&self) -> u64 {
        2 * self.d_model as u64
    }

    pub fn encoder_block_params(&self) -> u64 {
        2 * self.ln_params() + self.attn_params() + self.mlp_params()
    }

    pub fn decoder_block_params(&self) -> u64 {
        match self.arch {
            Arch::EncoderDecoder => 3 * self.ln_params() + 2 * self.attn_params() + self.mlp_params(),
            _ => self.encoder_block_params(),
        }
    }

    /// Parameters of the encoder stack including its final norm.
    pub fn encoder_params(&self) -> u64 {
        if !self.has_encoder() {
            return 0;
        }
        self.n_layers as u64 * self.encoder_block_params() + self.ln_params()
    }

    pub fn decoder_params(&self) -> u64 {
        if !self.has_decoder() {
            return 0;
        }
        self.n_layers as u64 * self.decoder_block_params() + self.ln_params()
    }

    pub fn embedding_params(&self) -> u64 {
        let (d, v, s) = (self.d_model as u64, self.vocab_size as u64, self.max_seq_len as u64);
        let head = if self.has_decoder() { d * v + v } else { 0 };
        v * d + s * d + head
    }

    /// Total parameters; `include_embeddings` adds token/position tables and
    /// the output head.
    pub fn param_count(&self, include_embeddings: bool) -> u64 {
        let core = self.encoder_params() + self.decoder_params();
        if include_embeddings {
            core + self.embedding_params()
        } else {
            core
        }
    }

    /// Linear-layer FLOPs of one encoder block per token.
    pub fn encoder_block_flops_per_token(&self) -> u64 {
        let (d, f) = (self.d_model as u64, self.d_ff as u64);
        8 * d * d + 4 * d * f
    }

    /// Linear-layer FLOPs of one decoder block for one new token, excluding
    /// the cross-attention key/value projections of the memory.
    pub fn decoder_block_flops_per_token(&self) -> u64 {
        let (d, f) = (self.d_model as u64, self.d_ff as u64);
        match self.arch {
            Arch::EncoderDecoder => 12 * d * d + 4 * d * f,
            _ => 8 * d * d + 4 * d * f,
        }
    }

    /// Cross-attention key/value projections for one memory row, all layers.
    pub fn cross_kv_flops_per_row(&self) -> u64 {
        match self.arch {
            Arch::EncoderDecoder => {
                let d = self.d_model as u64;
                self.n_layers as u64 * 4 * d * d
            }
            _ => 0,
        }
    }

    pub fn head_flops(&self) -> u64 {
        2 * (self.d_model * self.vocab_size) as u64
    }

    /// Bidirectional encoding of `m` prompt rows.
    pub fn encoder_prefill_flops(&self, m: u64) -> u64 {
        if !self.has_encoder() {
            return 0;
        }
        m * self.n_layers as u64 * self.encoder_block_flops_per_token()
    }

    /// Work done before the first decode step: the encoder and cross
    /// key/values for encoder-decoder models, the prompt rows of the causal
    /// stream for decoder-only models.
    pub fn prefill_flops(&self, m: u64) -> u64 {
        match self.arch {
            Arch::EncoderOnly => self.encoder_prefill_flops(m),
            Arch::EncoderDecoder => self.encoder_prefill_flops(m) + m * self.cross_kv_flops_per_row(),
            Arch::DecoderOnly => m * self.n_layers as u64 * self.decoder_block_flops_per_token(),
        }
    }

    /// One cached decode step including the output head.
    pub fn decode_step_flops(&self) -> u64 {
        if !self.has_decoder() {
            return 0;
        }
        self.n_layers as u64 * self.decoder_block_flops_per_token() + self.head_flops()
    }

    /// Closed-form linear-layer FLOPs of generating `n` tokens after an
    /// `m`-token prompt. FLOPs count `2·in·out` per row through every
    /// parameterized linear map; attention over the context is not included.
    ///
    /// Uncached decoding reprocesses the whole causal stream at every step
    /// and evaluates the head on its last row only; encoder-decoder models
    /// still encode the prompt (and its cross key/values) once.
    pub fn flops(&self, m: u64, n: u64, cached: bool) -> u64 {
        if !self.has_decoder() {
            return self.prefill_flops(m);
        }
        let layers = self.n_layers as u64;
        if cached {
            return self.prefill_flops(m) + n * self.decode_step_flops();
        }
        let block = self.decoder_block_flops_per_token();
        let steps: u64 = (0..n)
            .map(|t| {
                let rows = match self.arch {
                    Arch::EncoderDecoder => t + 1,
                    _ => m + t + 1,
                };
                layers * block * rows + self.head_flops()
            })
            .sum();
        match self.arch {
            Arch::EncoderDecoder => self.prefill_flops(m) + steps,
            _ => steps,
        }
    }
}
