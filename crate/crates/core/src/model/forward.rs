//! Differentiable forward pass on a [`Tape`]. Mirrors the inference kernels
//! in [`super::infer`] operation for operation.

use std::collections::HashMap;

use super::checkpoint::{names, Checkpoint};
use super::config::{Arch, ModelConfig};
use crate::autodiff::{Mask, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::BOS;

/// Checkpoint tensors placed on a tape as leaves.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    /// Binds every tensor of `ck`; trainable tensors become gradient leaves.
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, ck: &Checkpoint, trainable: bool) -> Self {
        let mut vars = HashMap::with_capacity(ck.tensors().len());
        for (name, t) in ck.tensors() {
            let v = if trainable { tape.param(t.cast()) } else { tape.constant(t.cast()) };
            vars.insert(name.clone(), v);
        }
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// How token ids become input rows of a model.
#[derive(Clone, Copy, Debug)]
pub enum TokenEmbedding {
    /// The model's own table.
    Native(Var),
    /// Rows of another model's (frozen) table mapped through a linear layer.
    Projected { table: Var, w: Var, b: Var },
}

pub fn linear<T: Scalar>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// A model wired onto a tape, with optional embedding/head replacements.
pub struct TapeModel<'c> {
    pub config: &'c ModelConfig,
    pub params: Bound,
    pub embedding: TokenEmbedding,
    pub head: Option<(Var, Var)>,
}

impl<'c> TapeModel<'c> {
    pub fn new<T: Scalar>(tape: &mut Tape<T>, ck: &'c Checkpoint, trainable: bool) -> Result<Self> {
        let config = ck.model_config()?;
        let params = Bound::bind(tape, ck, trainable);
        let embedding = TokenEmbedding::Native(params.get(names::TOK_EMB)?);
        let head = if config.has_decoder() {
            Some((params.get(names::HEAD_W)?, params.get(names::HEAD_B)?))
        } else {
            None
        };
        Ok(Self {
            config,
            params,
            embedding,
            head,
        })
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.params.get(name)
    }

    pub fn tokens<T: Scalar>(&self, tape: &mut Tape<T>, ids: &[u32]) -> Result<Var> {
        let ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        match self.embedding {
            TokenEmbedding::Native(table) => tape.embedding(table, &ids),
            TokenEmbedding::Projected { table, w, b } => {
                let e = tape.embedding(table, &ids)?;
                linear(tape, e, w, b)
            }
        }
    }

    pub fn positions<T: Scalar>(&self, tape: &mut Tape<T>, start: usize, len: usize) -> Result<Var> {
        if start + len > self.config.max_seq_len {
            return Err(Error::Length {
                len: start + len,
                max: self.config.max_seq_len,
            });
        }
        let pos: Vec<usize> = (start..start + len).collect();
        let table = self.p(names::POS_EMB)?;
        tape.embedding(table, &pos)
    }

    /// Token rows plus position rows `start..`.
    pub fn embed<T: Scalar>(&self, tape: &mut Tape<T>, ids: &[u32], start: usize) -> Result<Var> {
        let t = self.tokens(tape, ids)?;
        let p = self.positions(tape, start, ids.len())?;
        tape.add(t, p)
    }

    fn layer_norm<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let g = self.p(&format!("{prefix}.g"))?;
        let b = self.p(&format!("{prefix}.b"))?;
        tape.layer_norm(x, g, b)
    }

    fn lin<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, prefix: &str, which: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.w{which}"))?;
        let b = self.p(&format!("{prefix}.b{which}"))?;
        linear(tape, x, w, b)
    }

    fn attention<T: Scalar>(&self, tape: &mut Tape<T>, prefix: &str, xq: Var, xkv: Var, mask: Option<&Mask>) -> Result<Var> {
        let q = self.lin(tape, xq, prefix, "q")?;
        let k = self.lin(tape, xkv, prefix, "k")?;
        let v = self.lin(tape, xkv, prefix, "v")?;
        let (heads, hd) = (self.config.n_heads, self.config.head_dim());
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * hd, hd)?;
            let kh = tape.slice_cols(k, h * hd, hd)?;
            let vh = tape.slice_cols(v, h * hd, hd)?;
            let s = tape.matmul_t(qh, kh)?;
            let s = tape.scale(s, scale);
            let p = tape.softmax_rows(s, mask)?;
            outs.push(tape.matmul(p, vh)?);
        }
        let a = tape.concat_cols(&outs)?;
        self.lin(tape, a, prefix, "o")
    }

    fn mlp<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, prefix: &str) -> Result<Var> {
        let h = self.layer_norm(tape, x, &format!("{prefix}.ln2"))?;
        let a = self.lin(tape, h, &format!("{prefix}.mlp"), "1")?;
        let a = tape.gelu(a);
        let o = self.lin(tape, a, &format!("{prefix}.mlp"), "2")?;
        tape.add(x, o)
    }

    /// Bidirectional encoder over input rows, final norm included.
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, mut x: Var) -> Result<Var> {
        if !self.config.has_encoder() {
            return Err(Error::contract("model has no encoder"));
        }
        for i in 0..self.config.n_layers {
            let prefix = format!("enc.{i}");
            let h = self.layer_norm(tape, x, &format!("{prefix}.ln1"))?;
            let a = self.attention(tape, &format!("{prefix}.attn"), h, h, None)?;
            x = tape.add(x, a)?;
            x = self.mlp(tape, x, &prefix)?;
        }
        self.layer_norm(tape, x, "enc.lnf")
    }

    /// Causal decoder over input rows; `memory` feeds cross-attention.
    /// Stops after `depth` blocks and skips the final norm when `depth` is
    /// below the model depth.
    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, mut x: Var, memory: Option<Var>, mask: &Mask, depth: usize) -> Result<Var> {
        if (self.config.arch == Arch::EncoderDecoder) != memory.is_some() {
            return Err(Error::contract(
                "cross-attention input is required for encoder-decoder models and forbidden otherwise",
            ));
        }
        for i in 0..depth {
            let prefix = format!("dec.{i}");
            let h = self.layer_norm(tape, x, &format!("{prefix}.ln1"))?;
            let a = self.attention(tape, &format!("{prefix}.self"), h, h, Some(mask))?;
            x = tape.add(x, a)?;
            if let Some(mem) = memory {
                let h = self.layer_norm(tape, x, &format!("{prefix}.lnx"))?;
                let a = self.attention(tape, &format!("{prefix}.cross"), h, mem, None)?;
                x = tape.add(x, a)?;
            }
            x = self.mlp(tape, x, &prefix)?;
        }
        if depth == self.config.n_layers {
            self.layer_norm(tape, x, "dec.lnf")
        } else {
            Ok(x)
        }
    }

    pub fn logits<T: Scalar>(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let (w, b) = self.head.ok_or_else(|| Error::contract("model has no output head"))?;
        linear(tape, h, w, b)
    }

    /// Teacher-forced logits for every decoder input `[BOS, y_1..y_k]`.
    ///
    /// `prefix` holds the prompt rows: encoder input for encoder-decoder
    /// models, the head of the causal stream for decoder-only models, where
    /// decoder positions continue at `prompt_positions`. Decoder-only models
    /// return logits for every stream row; the first `prefix` rows belong to
    /// the prompt.
    pub fn teacher_forced<T: Scalar>(&self, tape: &mut Tape<T>, prefix: Var, prompt_positions: usize, targets: &[u32], block_prompt: bool) -> Result<Var> {
        let mut dec_ids = Vec::with_capacity(targets.len() + 1);
        dec_ids.push(BOS);
        dec_ids.extend_from_slice(targets);
        match self.config.arch {
            Arch::EncoderOnly => Err(Error::contract("encoder-only models cannot decode")),
            Arch::EncoderDecoder => {
                let memory = self.encode(tape, prefix)?;
                let x = self.embed(tape, &dec_ids, 0)?;
                let n = dec_ids.len();
                let h = self.decode(tape, x, Some(memory), &Mask::causal(n, n, 0), self.config.n_layers)?;
                self.logits(tape, h)
            }
            Arch::DecoderOnly => {
                let p = tape.value(prefix).rows();
                let y = self.embed(tape, &dec_ids, prompt_positions)?;
                let x = tape.concat_rows(&[prefix, y])?;
                let rows = p + dec_ids.len();
                let mask = if block_prompt {
                    Mask::from_fn(rows, rows, |i, j| j <= i && (i < p || j >= p))
                } else {
                    Mask::causal(rows, rows, 0)
                };
                let h = self.decode(tape, x, None, &mask, self.config.n_layers)?;
                self.logits(tape, h)
            }
        }
    }
}

impl TapeModel<'_> {
    /// Logits of the decoder rows only (`1 + inputs.len()` rows); prompt rows
    /// of decoder-only models never reach the head.
    pub fn decoder_logits<T: Scalar>(&self, tape: &mut Tape<T>, prefix: Var, prompt_positions: usize, inputs: &[u32]) -> Result<Var> {
        let mut dec_ids = Vec::with_capacity(inputs.len() + 1);
        dec_ids.push(BOS);
        dec_ids.extend_from_slice(inputs);
        let n = dec_ids.len();
        match self.config.arch {
            Arch::DecoderOnly => {
                let p = tape.value(prefix).rows();
                let y = self.embed(tape, &dec_ids, prompt_positions)?;
                let x = tape.concat_rows(&[prefix, y])?;
                let h = self.decode(tape, x, None, &Mask::causal(p + n, p + n, 0), self.config.n_layers)?;
                let h = tape.slice_rows(h, p, n)?;
                self.logits(tape, h)
            }
            _ => self.teacher_forced(tape, prefix, prompt_positions, inputs, false),
        }
    }
}

/// Teacher-forced logits of a plain model, one row per target token.
///
/// Encoder-decoder models take the encoder output as `cross` (the prompt is
/// then unused); decoder-only models read `prompt` as the head of the causal
/// stream and must get no `cross`. Row `i` is the distribution of `target[i]`
/// given `[BOS, target[..i]]`.
pub fn full_forward<T: Scalar>(tape: &mut Tape<T>, ck: &Checkpoint, prompt: &[u32], target: &[u32], cross: Option<&Tensor<T>>, trainable: bool) -> Result<Var> {
    let model = TapeModel::new(tape, ck, trainable)?;
    let n = target.len();
    let inputs: Vec<u32> = std::iter::once(BOS).chain(target.iter().copied().take(n.saturating_sub(1))).collect();
    match model.config.arch {
        Arch::EncoderOnly => Err(Error::contract("encoder-only models cannot decode")),
        Arch::EncoderDecoder => {
            let cross = cross.ok_or_else(|| Error::contract("encoder-decoder decoding needs the encoder output"))?;
            let memory = tape.constant(cross.clone());
            if n == 0 {
                return Ok(tape.constant(Tensor::zeros(&[0, model.config.vocab_size])));
            }
            let x = model.embed(tape, &inputs, 0)?;
            let h = model.decode(tape, x, Some(memory), &Mask::causal(n, n, 0), model.config.n_layers)?;
            model.logits(tape, h)
        }
        Arch::DecoderOnly => {
            if cross.is_some() {
                return Err(Error::contract("decoder-only models take no cross-attention input"));
            }
            if n == 0 {
                return Ok(tape.constant(Tensor::zeros(&[0, model.config.vocab_size])));
            }
            let m = prompt.len();
            let mut stream = prompt.to_vec();
            stream.extend_from_slice(&inputs);
            let x = model.embed(tape, &stream, 0)?;
            let rows = stream.len();
            let h = model.decode(tape, x, None, &Mask::causal(rows, rows, 0), model.config.n_layers)?;
            let h = tape.slice_rows(h, m, n)?;
            model.logits(tape, h)
        }
    }
}
