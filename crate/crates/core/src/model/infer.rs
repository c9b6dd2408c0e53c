//! Tape-free `f32` inference: bidirectional encoding, chunked causal decoding
//! over a key/value cache, and the output head.
//!
//! Every linear map reports `2·rows·in·out` to a [`Flops`] counter, and
//! attention over the context is tallied separately, so a real run can be
//! checked against [`ModelConfig::flops`].

use std::sync::Arc;

use super::checkpoint::{names, Checkpoint};
use super::config::{Arch, ModelConfig};
use crate::autodiff::{gelu, LN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{softmax_in_place, Scalar, Tensor};

/// FLOPs observed while running the kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flops {
    /// Parameterized linear maps (including the head and bridge layers).
    pub linear: u64,
    /// Query-key scores and probability-weighted values.
    pub attention: u64,
}

impl Flops {
    pub fn total(&self) -> u64 {
        self.linear + self.attention
    }
}

impl std::ops::AddAssign for Flops {
    fn add_assign(&mut self, rhs: Self) {
        self.linear += rhs.linear;
        self.attention += rhs.attention;
    }
}

/// Borrowed `[in, out]` weight with bias.
#[derive(Clone, Copy, Debug)]
pub struct Linear<'a> {
    w: &'a [f32],
    b: &'a [f32],
    pub din: usize,
    pub dout: usize,
}

impl<'a> Linear<'a> {
    pub fn from_ckpt(ck: &'a Checkpoint, w: &str, b: &str) -> Result<Self> {
        let (wt, bt) = (ck.get(w)?, ck.get(b)?);
        Self::new(wt, bt)
    }

    pub fn new(w: &'a Tensor<f32>, b: &'a Tensor<f32>) -> Result<Self> {
        if w.shape().len() != 2 || b.numel() != w.cols() {
            return Err(Error::dim("linear", w.shape(), b.shape()));
        }
        Ok(Self {
            w: w.data(),
            b: b.data(),
            din: w.rows(),
            dout: w.cols(),
        })
    }

    pub fn apply(&self, x: &[f32], rows: usize, flops: &mut Flops) -> Vec<f32> {
        debug_assert_eq!(x.len(), rows * self.din);
        let mut out = Vec::with_capacity(rows * self.dout);
        for _ in 0..rows {
            out.extend_from_slice(self.b);
        }
        if rows < GEMM_MIN_ROWS {
            // Vector-matrix products as sums of scaled weight rows.
            for (xr, or) in x.chunks(self.din).zip(out.chunks_mut(self.dout)) {
                for (i, xi) in xr.iter().enumerate() {
                    let wr = &self.w[i * self.dout..(i + 1) * self.dout];
                    for (o, w) in or.iter_mut().zip(wr) {
                        *o += xi * w;
                    }
                }
            }
        } else {
            f32::gemm(
                rows,
                self.din,
                self.dout,
                1.0,
                x,
                (self.din as isize, 1),
                self.w,
                (self.dout as isize, 1),
                1.0,
                &mut out,
                self.dout as isize,
            );
        }
        flops.linear += 2 * (rows * self.din * self.dout) as u64;
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Norm<'a> {
    g: &'a [f32],
    b: &'a [f32],
}

impl<'a> Norm<'a> {
    fn from_ckpt(ck: &'a Checkpoint, prefix: &str) -> Result<Self> {
        Ok(Self {
            g: ck.get(&format!("{prefix}.g"))?.data(),
            b: ck.get(&format!("{prefix}.b"))?.data(),
        })
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let d = self.g.len();
        let mut out = vec![0.0; x.len()];
        for (row, o) in x.chunks(d).zip(out.chunks_mut(d)) {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let r = 1.0 / (var + LN_EPS as f32).sqrt();
            for j in 0..d {
                o[j] = (row[j] - mean) * r * self.g[j] + self.b[j];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
struct Attn<'a> {
    q: Linear<'a>,
    k: Linear<'a>,
    v: Linear<'a>,
    o: Linear<'a>,
}

impl<'a> Attn<'a> {
    fn from_ckpt(ck: &'a Checkpoint, prefix: &str) -> Result<Self> {
        let lin = |p: &str| Linear::from_ckpt(ck, &format!("{prefix}.w{p}"), &format!("{prefix}.b{p}"));
        Ok(Self {
            q: lin("q")?,
            k: lin("k")?,
            v: lin("v")?,
            o: lin("o")?,
        })
    }
}

#[derive(Clone, Debug)]
struct Block<'a> {
    ln1: Norm<'a>,
    attn: Attn<'a>,
    cross: Option<(Norm<'a>, Attn<'a>)>,
    ln2: Norm<'a>,
    w1: Linear<'a>,
    w2: Linear<'a>,
}

impl<'a> Block<'a> {
    fn from_ckpt(ck: &'a Checkpoint, stack: &str, i: usize, cross: bool) -> Result<Self> {
        let p = |leaf: &str| format!("{stack}.{i}.{leaf}");
        let attn_name = if stack == "enc" { "attn" } else { "self" };
        Ok(Self {
            ln1: Norm::from_ckpt(ck, &p("ln1"))?,
            attn: Attn::from_ckpt(ck, &p(attn_name))?,
            cross: if cross {
                Some((Norm::from_ckpt(ck, &p("lnx"))?, Attn::from_ckpt(ck, &p("cross"))?))
            } else {
                None
            },
            ln2: Norm::from_ckpt(ck, &p("ln2"))?,
            w1: Linear::from_ckpt(ck, &p("mlp.w1"), &p("mlp.b1"))?,
            w2: Linear::from_ckpt(ck, &p("mlp.w2"), &p("mlp.b2"))?,
        })
    }

    fn mlp(&self, x: &mut [f32], rows: usize, flops: &mut Flops) {
        let h = self.ln2.apply(x);
        let mut a = self.w1.apply(&h, rows, flops);
        for v in a.iter_mut() {
            *v = gelu(*v);
        }
        let out = self.w2.apply(&a, rows, flops);
        add_in_place(x, &out);
    }
}

/// Batches smaller than this run row by row, so a row's result does not
/// depend on how many rows are processed together (speculative verification
/// relies on this for exact agreement with step-by-step decoding).
pub const GEMM_MIN_ROWS: usize = 16;

/// Resolved references into a model checkpoint.
#[derive(Clone, Debug)]
pub struct ModelView<'a> {
    pub config: &'a ModelConfig,
    pub tok_emb: &'a Tensor<f32>,
    pub pos_emb: &'a Tensor<f32>,
    enc: Vec<Block<'a>>,
    enc_lnf: Option<Norm<'a>>,
    dec: Vec<Block<'a>>,
    dec_lnf: Option<Norm<'a>>,
    pub head: Option<Linear<'a>>,
}

impl<'a> ModelView<'a> {
    pub fn new(ck: &'a Checkpoint) -> Result<Self> {
        let config = ck.model_config()?;
        let mut view = Self {
            config,
            tok_emb: ck.get(names::TOK_EMB)?,
            pos_emb: ck.get(names::POS_EMB)?,
            enc: Vec::new(),
            enc_lnf: None,
            dec: Vec::new(),
            dec_lnf: None,
            head: None,
        };
        if config.has_encoder() {
            for i in 0..config.n_layers {
                view.enc.push(Block::from_ckpt(ck, "enc", i, false)?);
            }
            view.enc_lnf = Some(Norm::from_ckpt(ck, "enc.lnf")?);
        }
        if config.has_decoder() {
            let cross = config.arch == Arch::EncoderDecoder;
            for i in 0..config.n_layers {
                view.dec.push(Block::from_ckpt(ck, "dec", i, cross)?);
            }
            view.dec_lnf = Some(Norm::from_ckpt(ck, "dec.lnf")?);
            view.head = Some(Linear::from_ckpt(ck, names::HEAD_W, names::HEAD_B)?);
        }
        Ok(view)
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Token plus absolute-position embeddings.
    pub fn embed(&self, ids: &[u32], positions: impl Iterator<Item = usize>) -> Result<Vec<f32>> {
        let d = self.d_model();
        let mut out = Vec::with_capacity(ids.len() * d);
        for (&id, pos) in ids.iter().zip(positions) {
            if id as usize >= self.tok_emb.rows() {
                return Err(Error::Decoding { id, size: self.tok_emb.rows() });
            }
            if pos >= self.config.max_seq_len {
                return Err(Error::Length {
                    len: pos + 1,
                    max: self.config.max_seq_len,
                });
            }
            let (t, p) = (self.tok_emb.row(id as usize), self.pos_emb.row(pos));
            out.extend(t.iter().zip(p).map(|(a, b)| a + b));
        }
        Ok(out)
    }

    pub fn position_rows(&self, positions: impl Iterator<Item = usize>) -> Vec<f32> {
        positions.flat_map(|p| self.pos_emb.row(p).iter().copied()).collect()
    }

    /// Bidirectional encoder stack over embedded rows, then its final norm.
    pub fn encode_rows(&self, mut x: Vec<f32>, flops: &mut Flops) -> Result<Vec<f32>> {
        self.encode_rows_to_depth(&mut x, self.enc.len(), flops)?;
        Ok(self.enc_lnf.expect("encoder present").apply(&x))
    }

    /// Runs the lowest `depth` encoder blocks in place, without final norm.
    fn encode_rows_to_depth(&self, x: &mut [f32], depth: usize, flops: &mut Flops) -> Result<()> {
        if self.enc.is_empty() {
            return Err(Error::contract("model has no encoder"));
        }
        let d = self.d_model();
        let rows = x.len() / d;
        let heads = self.config.n_heads;
        for block in &self.enc[..depth] {
            let h = block.ln1.apply(x);
            let q = block.attn.q.apply(&h, rows, flops);
            let mut kv = LayerKv::new(heads, rows, d / heads);
            kv.append(&block.attn.k.apply(&h, rows, flops), &block.attn.v.apply(&h, rows, flops), 0, rows);
            let a = attend(&q, rows, &kv, rows, None, flops);
            add_in_place(x, &block.attn.o.apply(&a, rows, flops));
            block.mlp(x, rows, flops);
        }
        Ok(())
    }

    /// Hidden states of the causal stack after block `depth` (0 = the input
    /// rows themselves), as used to read intermediate layers of a
    /// decoder-only model.
    pub fn causal_hidden_at(&self, x: Vec<f32>, depth: usize, flops: &mut Flops) -> Result<Vec<f32>> {
        if self.config.arch != Arch::DecoderOnly {
            return Err(Error::contract("layer extraction needs a decoder-only model"));
        }
        if depth > self.dec.len() {
            return Err(Error::contract(format!("extraction layer {depth} exceeds depth {}", self.dec.len())));
        }
        let d = self.d_model();
        let rows = x.len() / d;
        let mut cache = KvCache::new(self.config, rows);
        self.decode_blocks(&mut cache, None, x, depth, flops)
    }

    /// Cross-attention keys/values of an encoder memory for every layer.
    pub fn cross_kv(&self, memory: &[f32], flops: &mut Flops) -> CrossKv {
        let d = self.d_model();
        let rows = memory.len() / d;
        let heads = self.config.n_heads;
        let layers = self
            .dec
            .iter()
            .map(|b| {
                let (_, attn) = b.cross.as_ref().expect("encoder-decoder block");
                let mut kv = LayerKv::new(heads, rows, d / heads);
                kv.append(&attn.k.apply(memory, rows, flops), &attn.v.apply(memory, rows, flops), 0, rows);
                kv
            })
            .collect();
        CrossKv { layers, len: rows }
    }

    /// Appends `x` (already embedded) to the causal stream and returns the
    /// final-normed hidden rows.
    pub fn decode_rows(&self, cache: &mut KvCache, cross: Option<&CrossKv>, x: Vec<f32>, flops: &mut Flops) -> Result<Vec<f32>> {
        let h = self.decode_blocks(cache, cross, x, self.dec.len(), flops)?;
        Ok(self.dec_lnf.expect("decoder present").apply(&h))
    }

    fn decode_blocks(&self, cache: &mut KvCache, cross: Option<&CrossKv>, mut x: Vec<f32>, depth: usize, flops: &mut Flops) -> Result<Vec<f32>> {
        let d = self.d_model();
        let rows = x.len() / d;
        let start = cache.filled;
        if start + rows > cache.capacity {
            return Err(Error::Length {
                len: start + rows,
                max: cache.capacity,
            });
        }
        if (self.config.arch == Arch::EncoderDecoder) != cross.is_some() {
            return Err(Error::contract(
                "cross-attention input is required for encoder-decoder models and forbidden otherwise",
            ));
        }
        for (l, block) in self.dec[..depth].iter().enumerate() {
            let h = block.ln1.apply(&x);
            let q = block.attn.q.apply(&h, rows, flops);
            let k = block.attn.k.apply(&h, rows, flops);
            let v = block.attn.v.apply(&h, rows, flops);
            cache.layers[l].append(&k, &v, start, rows);
            let a = attend(&q, rows, &cache.layers[l], start + rows, Some(start), flops);
            add_in_place(&mut x, &block.attn.o.apply(&a, rows, flops));
            if let (Some((ln, attn)), Some(cross)) = (&block.cross, cross) {
                let h = ln.apply(&x);
                let q = attn.q.apply(&h, rows, flops);
                let a = attend(&q, rows, &cross.layers[l], cross.len, None, flops);
                add_in_place(&mut x, &attn.o.apply(&a, rows, flops));
            }
            block.mlp(&mut x, rows, flops);
        }
        cache.filled = start + rows;
        Ok(x)
    }
}

fn add_in_place(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

/// Keys and values of one layer, laid out `(heads, capacity, head_dim)`.
#[derive(Clone, Debug)]
pub struct LayerKv {
    k: Vec<f32>,
    v: Vec<f32>,
    heads: usize,
    capacity: usize,
    head_dim: usize,
}

impl LayerKv {
    fn new(heads: usize, capacity: usize, head_dim: usize) -> Self {
        Self {
            k: vec![0.0; heads * capacity * head_dim],
            v: vec![0.0; heads * capacity * head_dim],
            heads,
            capacity,
            head_dim,
        }
    }

    fn append(&mut self, k: &[f32], v: &[f32], at: usize, rows: usize) {
        let (hd, d) = (self.head_dim, self.heads * self.head_dim);
        for r in 0..rows {
            for h in 0..self.heads {
                let dst = (h * self.capacity + at + r) * hd;
                self.k[dst..dst + hd].copy_from_slice(&k[r * d + h * hd..r * d + (h + 1) * hd]);
                self.v[dst..dst + hd].copy_from_slice(&v[r * d + h * hd..r * d + (h + 1) * hd]);
            }
        }
    }

    /// Keys of `head` for positions `0..len`, row-major `(len, head_dim)`.
    pub fn keys(&self, head: usize, len: usize) -> &[f32] {
        let s = head * self.capacity * self.head_dim;
        &self.k[s..s + len * self.head_dim]
    }

    pub fn values(&self, head: usize, len: usize) -> &[f32] {
        let s = head * self.capacity * self.head_dim;
        &self.v[s..s + len * self.head_dim]
    }
}

/// Scaled dot-product attention of `rows` queries against the first `len`
/// cached keys. With `causal = Some(offset)`, query `i` sees keys
/// `0..=offset + i`.
fn attend(q: &[f32], rows: usize, kv: &LayerKv, len: usize, causal: Option<usize>, flops: &mut Flops) -> Vec<f32> {
    let (heads, hd) = (kv.heads, kv.head_dim);
    let d = heads * hd;
    let scale = 1.0 / (hd as f32).sqrt();
    let visible = |i: usize| causal.map_or(len, |off| (off + i + 1).min(len));
    let mut out = vec![0.0; rows * d];
    if rows >= GEMM_MIN_ROWS {
        let mut scores = vec![0.0f32; rows * len];
        for h in 0..heads {
            let (keys, values) = (kv.keys(h, len), kv.values(h, len));
            f32::gemm(
                rows,
                hd,
                len,
                scale,
                &q[h * hd..],
                (d as isize, 1),
                keys,
                (1, hd as isize),
                0.0,
                &mut scores,
                len as isize,
            );
            for i in 0..rows {
                let row = &mut scores[i * len..(i + 1) * len];
                let (seen, hidden) = row.split_at_mut(visible(i));
                softmax_in_place(seen);
                hidden.iter_mut().for_each(|v| *v = 0.0);
            }
            f32::gemm(
                rows,
                len,
                hd,
                1.0,
                &scores,
                (len as isize, 1),
                values,
                (hd as isize, 1),
                0.0,
                &mut out[h * hd..],
                d as isize,
            );
        }
    } else {
        let mut scores = vec![0.0f32; len];
        for h in 0..heads {
            let (keys, values) = (kv.keys(h, len), kv.values(h, len));
            for i in 0..rows {
                let qi = &q[i * d + h * hd..i * d + (h + 1) * hd];
                let s = &mut scores[..visible(i)];
                for (j, sj) in s.iter_mut().enumerate() {
                    let kj = &keys[j * hd..(j + 1) * hd];
                    *sj = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                softmax_in_place(s);
                let oi = &mut out[i * d + h * hd..i * d + (h + 1) * hd];
                for (j, p) in s.iter().enumerate() {
                    let vj = &values[j * hd..(j + 1) * hd];
                    for (o, v) in oi.iter_mut().zip(vj) {
                        *o += p * v;
                    }
                }
            }
        }
    }
    flops.attention += (0..rows).map(|i| 4 * (visible(i) * hd * heads) as u64).sum::<u64>();
    out
}

/// Encoder memory projected to cross-attention keys/values.
#[derive(Clone, Debug)]
pub struct CrossKv {
    layers: Vec<LayerKv>,
    len: usize,
}

impl CrossKv {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Per-layer self-attention keys/values, each `(heads, filled_len, head_dim)`.
///
/// Rows are only ever appended, except that [`KvCache::rollback`] may drop
/// rows appended by a speculative verification pass that were rejected.
#[derive(Clone, Debug)]
pub struct KvCache {
    layers: Vec<LayerKv>,
    filled: usize,
    capacity: usize,
    /// Cross-attention memory for encoder-decoder models.
    pub cross: Option<Arc<CrossKv>>,
}

impl KvCache {
    pub fn new(config: &ModelConfig, capacity: usize) -> Self {
        let hd = config.head_dim();
        Self {
            layers: (0..config.n_layers).map(|_| LayerKv::new(config.n_heads, capacity, hd)).collect(),
            filled: 0,
            capacity,
            cross: None,
        }
    }

    pub fn filled_len(&self) -> usize {
        self.filled
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn layer(&self, l: usize) -> &LayerKv {
        &self.layers[l]
    }

    pub fn rollback(&mut self, len: usize) {
        assert!(len <= self.filled, "rollback beyond filled length");
        self.filled = len;
    }
}

/// Last-layer encoder output for `tokens`.
pub fn encoder_forward(ck: &Checkpoint, tokens: &[u32], flops: &mut Flops) -> Result<Tensor<f32>> {
    let view = ModelView::new(ck)?;
    if tokens.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    if tokens.len() > view.config.max_seq_len {
        return Err(Error::Length {
            len: tokens.len(),
            max: view.config.max_seq_len,
        });
    }
    let x = view.embed(tokens, 0..tokens.len())?;
    let h = view.encode_rows(x, flops)?;
    Tensor::matrix(tokens.len(), view.d_model(), h)
}

/// One incremental decoder step at the next free position of `cache`.
///
/// For encoder-decoder models `cross` is the encoder output; its keys and
/// values are computed on the first call and kept in the cache.
pub fn decoder_step(ck: &Checkpoint, cache: &mut KvCache, token: u32, cross: Option<&Tensor<f32>>, flops: &mut Flops) -> Result<Vec<f32>> {
    let view = ModelView::new(ck)?;
    if view.config.arch == Arch::DecoderOnly && cross.is_some() {
        return Err(Error::contract("decoder-only models take no cross-attention input"));
    }
    if cache.filled + 1 > view.config.max_seq_len {
        return Err(Error::Length {
            len: cache.filled + 1,
            max: view.config.max_seq_len,
        });
    }
    if let (Some(mem), None) = (cross, &cache.cross) {
        if mem.cols() != view.d_model() {
            return Err(Error::dim("cross input", mem.shape(), &[mem.rows(), view.d_model()]));
        }
        cache.cross = Some(Arc::new(view.cross_kv(mem.data(), flops)));
    }
    let pos = cache.filled;
    let x = view.embed(&[token], pos..pos + 1)?;
    let cross_kv = cache.cross.clone();
    let h = view.decode_rows(cache, cross_kv.as_deref(), x, flops)?;
    Ok(view.head.expect("decoder has head").apply(&h, 1, flops))
}
