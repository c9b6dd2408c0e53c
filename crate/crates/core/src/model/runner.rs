//! Incremental generation state shared by plain, hybrid and prompt-tuned
//! models. All of them reduce to "some prompt rows, then decoder tokens".

use std::sync::Arc;

use super::checkpoint::Checkpoint;
use super::config::Arch;
use super::infer::{CrossKv, Flops, KvCache, Linear, ModelView};
use crate::decoding::StepModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Embedding lookup into a foreign (frozen) table followed by a projection.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedEmbedding<'a> {
    pub table: &'a Tensor<f32>,
    pub proj: Linear<'a>,
}

#[derive(Clone, Debug)]
pub struct Runner<'a> {
    pub view: ModelView<'a>,
    pub embedding: Option<ProjectedEmbedding<'a>>,
    pub head: Linear<'a>,
    /// Reuse keys/values across steps; otherwise every step reprocesses the
    /// whole causal stream.
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct RunState {
    /// Decoder-only: prompt rows at the head of the stream (kept for
    /// uncached recomputation).
    prefix: Arc<Vec<f32>>,
    prefix_rows: usize,
    prompt_positions: usize,
    cross: Option<Arc<CrossKv>>,
    cache: KvCache,
    fed: Vec<u32>,
}

impl RunState {
    pub fn fed(&self) -> &[u32] {
        &self.fed
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }
}

impl<'a> Runner<'a> {
    pub fn new(ck: &'a Checkpoint, cached: bool) -> Result<Self> {
        let view = ModelView::new(ck)?;
        let head = view.head.ok_or_else(|| Error::contract("encoder-only models cannot generate"))?;
        Ok(Self {
            view,
            embedding: None,
            head,
            cached,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.head.dout
    }

    pub fn d_model(&self) -> usize {
        self.view.d_model()
    }

    /// Input rows for `ids` at consecutive positions from `start`.
    pub fn embed_tokens(&self, ids: &[u32], start: usize, flops: &mut Flops) -> Result<Vec<f32>> {
        match &self.embedding {
            None => self.view.embed(ids, start..start + ids.len()),
            Some(pe) => {
                let max = self.view.config.max_seq_len;
                if start + ids.len() > max {
                    return Err(Error::Length { len: start + ids.len(), max });
                }
                let mut rows = Vec::with_capacity(ids.len() * pe.table.cols());
                for &id in ids {
                    if id as usize >= pe.table.rows() {
                        return Err(Error::Decoding { id, size: pe.table.rows() });
                    }
                    rows.extend_from_slice(pe.table.row(id as usize));
                }
                let mut x = pe.proj.apply(&rows, ids.len(), flops);
                let pos = self.view.position_rows(start..start + ids.len());
                for (a, b) in x.iter_mut().zip(&pos) {
                    *a += b;
                }
                Ok(x)
            }
        }
    }

    /// Tokens that can still be decoded after a prompt occupying
    /// `prompt_positions` positions.
    pub fn max_new_tokens(&self, prompt_positions: usize) -> usize {
        match self.view.config.arch {
            Arch::DecoderOnly => self.view.config.max_seq_len.saturating_sub(prompt_positions),
            _ => self.view.config.max_seq_len,
        }
    }

    /// Consumes prompt rows: encoder input for encoder-decoder models, the
    /// causal prefix for decoder-only ones.
    pub fn start(&self, prefix: Vec<f32>, prompt_positions: usize, flops: &mut Flops) -> Result<RunState> {
        let d = self.d_model();
        if prefix.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if prefix.len() % d != 0 {
            return Err(Error::dim("prompt rows", &[prefix.len()], &[d]));
        }
        let rows = prefix.len() / d;
        let config = self.view.config;
        if prompt_positions > config.max_seq_len {
            return Err(Error::Length {
                len: prompt_positions,
                max: config.max_seq_len,
            });
        }
        match config.arch {
            Arch::EncoderOnly => Err(Error::contract("encoder-only models cannot generate")),
            Arch::EncoderDecoder => {
                let memory = self.view.encode_rows(prefix, flops)?;
                let cross = Arc::new(self.view.cross_kv(&memory, flops));
                Ok(RunState {
                    prefix: Arc::new(Vec::new()),
                    prefix_rows: 0,
                    prompt_positions: 0,
                    cross: Some(cross),
                    cache: KvCache::new(config, config.max_seq_len),
                    fed: Vec::new(),
                })
            }
            Arch::DecoderOnly => {
                let capacity = rows + config.max_seq_len - prompt_positions;
                let mut cache = KvCache::new(config, capacity);
                if self.cached {
                    self.view.decode_rows(&mut cache, None, prefix.clone(), flops)?;
                }
                Ok(RunState {
                    prefix: Arc::new(prefix),
                    prefix_rows: rows,
                    prompt_positions,
                    cross: None,
                    cache,
                    fed: Vec::new(),
                })
            }
        }
    }

    /// Starts an encoder-decoder model from an already computed encoder
    /// output, so a shared prompt encoding is not recomputed.
    pub fn start_encoded(&self, memory: &[f32], flops: &mut Flops) -> Result<RunState> {
        let config = self.view.config;
        if config.arch != Arch::EncoderDecoder {
            return Err(Error::contract("only encoder-decoder models take an encoder output"));
        }
        if memory.is_empty() || memory.len() % self.d_model() != 0 {
            return Err(Error::dim("encoder output", &[memory.len()], &[self.d_model()]));
        }
        Ok(RunState {
            prefix: Arc::new(Vec::new()),
            prefix_rows: 0,
            prompt_positions: 0,
            cross: Some(Arc::new(self.view.cross_kv(memory, flops))),
            cache: KvCache::new(config, config.max_seq_len),
            fed: Vec::new(),
        })
    }

    /// Appends decoder tokens; returns logits for every new row, or for the
    /// last one only.
    pub fn feed(&self, state: &mut RunState, tokens: &[u32], all_rows: bool, flops: &mut Flops) -> Result<Vec<Vec<f32>>> {
        if tokens.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.d_model();
        let start = state.prompt_positions + state.fed.len();
        let hidden = if self.cached {
            let x = self.embed_tokens(tokens, start, flops)?;
            let h = self.view.decode_rows(&mut state.cache, state.cross.as_deref(), x, flops)?;
            state.fed.extend_from_slice(tokens);
            h
        } else {
            let mut all = state.fed.clone();
            all.extend_from_slice(tokens);
            let y = self.embed_tokens(&all, state.prompt_positions, flops)?;
            let mut cache = KvCache::new(self.view.config, state.cache.capacity());
            let x = match self.view.config.arch {
                Arch::DecoderOnly => {
                    let mut x = state.prefix.as_ref().clone();
                    x.extend_from_slice(&y);
                    x
                }
                _ => y,
            };
            let h = self.view.decode_rows(&mut cache, state.cross.as_deref(), x, flops)?;
            state.fed = all;
            h[h.len() - tokens.len() * d..].to_vec()
        };
        let rows = tokens.len();
        let wanted = if all_rows { 0..rows } else { rows - 1..rows };
        let mut out = Vec::with_capacity(wanted.len());
        for r in wanted {
            out.push(self.head.apply(&hidden[r * d..(r + 1) * d], 1, flops));
        }
        Ok(out)
    }

    pub fn rollback(&self, state: &mut RunState, fed_len: usize) {
        state.fed.truncate(fed_len);
        if self.cached {
            state.cache.rollback(state.prefix_rows + fed_len);
        }
    }
}

/// A checkpoint used directly for generation.
#[derive(Clone, Debug)]
pub struct PlainModel<'a> {
    runner: Runner<'a>,
}

impl<'a> PlainModel<'a> {
    pub fn new(ck: &'a Checkpoint) -> Result<Self> {
        Ok(Self {
            runner: Runner::new(ck, true)?,
        })
    }

    pub fn uncached(ck: &'a Checkpoint) -> Result<Self> {
        Ok(Self {
            runner: Runner::new(ck, false)?,
        })
    }

    pub fn runner(&self) -> &Runner<'a> {
        &self.runner
    }
}

impl StepModel for PlainModel<'_> {
    type State = RunState;

    fn vocab_size(&self) -> usize {
        self.runner.vocab_size()
    }

    fn max_new_tokens(&self, prompt_len: usize) -> usize {
        self.runner.max_new_tokens(prompt_len)
    }

    fn start(&self, prompt: &[u32], flops: &mut Flops) -> Result<RunState> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let x = self.runner.embed_tokens(prompt, 0, flops)?;
        self.runner.start(x, prompt.len(), flops)
    }

    fn feed(&self, state: &mut RunState, tokens: &[u32], all_rows: bool, flops: &mut Flops) -> Result<Vec<Vec<f32>>> {
        self.runner.feed(state, tokens, all_rows, flops)
    }

    fn fed_len(&self, state: &RunState) -> usize {
        state.fed.len()
    }

    fn rollback(&self, state: &mut RunState, fed_len: usize) {
        self.runner.rollback(state, fed_len)
    }
}
