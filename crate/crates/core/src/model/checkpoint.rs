//! Named parameter sets and their on-disk format.
//!
//! File layout: the magic `L2S1`, a little-endian `u32` header length, the
//! UTF-8 JSON header `{config, role, step, tensors: [{name, shape, offset}]}`
//! and then every tensor as contiguous little-endian `f32`, in directory
//! order. Offsets are in bytes from the start of the data section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Arch, ModelConfig};
use crate::bridge::BridgeConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"L2S1";
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Llm,
    Slm,
    Bridge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckpointConfig {
    Model(ModelConfig),
    Bridge(BridgeConfig),
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: CheckpointConfig,
    role: Role,
    step: u64,
    tensors: Vec<DirEntry>,
}

#[derive(Serialize, Deserialize)]
struct DirEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub role: Role,
    pub step: u64,
    tensors: BTreeMap<String, Tensor<f32>>,
}

/// Parameter names. Weights of linear maps are stored `[in, out]`.
pub mod names {
    pub const TOK_EMB: &str = "tok_emb";
    pub const POS_EMB: &str = "pos_emb";
    pub const HEAD_W: &str = "head.w";
    pub const HEAD_B: &str = "head.b";

    pub fn enc(layer: usize, leaf: &str) -> String {
        format!("enc.{layer}.{leaf}")
    }

    pub fn dec(layer: usize, leaf: &str) -> String {
        format!("dec.{layer}.{leaf}")
    }
}

impl Checkpoint {
    pub fn from_parts(config: CheckpointConfig, role: Role, step: u64, tensors: BTreeMap<String, Tensor<f32>>) -> Self {
        Self { config, role, step, tensors }
    }

    /// Fresh model: weights `normal(0, 0.02)`, biases zero, norm gains one.
    pub fn init(config: ModelConfig, role: Role, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in model_shapes(&config) {
            let t = init_tensor(&name, &shape, &mut rng);
            tensors.insert(name, t);
        }
        Ok(Self {
            config: CheckpointConfig::Model(config),
            role,
            step: 0,
            tensors,
        })
    }

    pub fn model_config(&self) -> Result<&ModelConfig> {
        match &self.config {
            CheckpointConfig::Model(c) => Ok(c),
            CheckpointConfig::Bridge(_) => Err(Error::contract("bridge checkpoint has no model config")),
        }
    }

    pub fn bridge_config(&self) -> Result<&BridgeConfig> {
        match &self.config {
            CheckpointConfig::Bridge(c) => Ok(c),
            CheckpointConfig::Model(_) => Err(Error::contract("model checkpoint has no bridge config")),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors.get(name).ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut BTreeMap<String, Tensor<f32>> {
        &mut self.tensors
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn num_params(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks every tensor against the shapes implied by the config.
    pub fn validate(&self) -> Result<()> {
        let expected: BTreeMap<String, Vec<usize>> = match &self.config {
            CheckpointConfig::Model(c) => {
                c.validate()?;
                model_shapes(c).into_iter().collect()
            }
            CheckpointConfig::Bridge(b) => b.shapes().into_iter().collect(),
        };
        if expected.len() != self.tensors.len() {
            return Err(Error::Format(format!("expected {} tensors, found {}", expected.len(), self.tensors.len())));
        }
        for (name, shape) in &expected {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("checkpoint tensor", t.shape(), shape));
            }
        }
        Ok(())
    }

    /// Keeps the lowest `depth` blocks of every stack plus embeddings, final
    /// norms and head.
    pub fn truncate_layers(&self, depth: usize) -> Result<Self> {
        let config = self.model_config()?;
        if depth == 0 || depth > config.n_layers {
            return Err(Error::contract(format!("truncation depth {depth} outside 1..={}", config.n_layers)));
        }
        let mut config = config.clone();
        config.n_layers = depth;
        let tensors = self
            .tensors
            .iter()
            .filter(|(name, _)| block_index(name).is_none_or(|i| i < depth))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(Self {
            config: CheckpointConfig::Model(config),
            role: self.role,
            step: self.step,
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut dir = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            dir.push(DirEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.numel() as u64;
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            role: self.role,
            step: self.step,
            tensors: dir,
        })?;
        let len = u32::try_from(header.len()).map_err(|_| Error::Format("header too large".into()))?;
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let header_end = 8 + len;
        if bytes.len() < header_end {
            return Err(Error::Format("truncated header".into()));
        }
        let header: Header = serde_json::from_slice(&bytes[8..header_end])?;
        let data = &bytes[header_end..];
        let mut tensors = BTreeMap::new();
        for entry in header.tensors {
            let numel: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 4 * numel;
            if end > data.len() {
                return Err(Error::Format(format!("tensor `{}` runs past end of file", entry.name)));
            }
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.insert(entry.name, Tensor::new(entry.shape, values)?);
        }
        let ckpt = Self {
            config: header.config,
            role: header.role,
            step: header.step,
            tensors,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// True when every tensor is bitwise equal to `other`'s.
    pub fn bit_equal(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().all(|(k, v)| {
                other
                    .tensors
                    .get(k)
                    .is_some_and(|o| o.shape() == v.shape() && o.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()))
            })
    }
}

/// Norm gains (`*.g`) start at one, biases (`*.b*`) at zero, everything
/// else is drawn from `normal(0, 0.02)`.
pub(crate) fn init_tensor<R: Rng + ?Sized>(name: &str, shape: &[usize], rng: &mut R) -> Tensor<f32> {
    let leaf = name.rsplit('.').next().unwrap_or(name);
    if leaf == "g" {
        Tensor::full(shape, 1.0)
    } else if leaf.starts_with('b') {
        Tensor::zeros(shape)
    } else {
        Tensor::randn(shape, INIT_STD, rng)
    }
}

fn block_index(name: &str) -> Option<usize> {
    let mut parts = name.split('.');
    match parts.next() {
        Some("enc") | Some("dec") => parts.next()?.parse().ok(),
        _ => None,
    }
}

fn attn_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    for p in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}.w{p}"), vec![d, d]));
        out.push((format!("{prefix}.b{p}"), vec![d]));
    }
}

fn ln_shapes(prefix: &str, d: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.g"), vec![d]));
    out.push((format!("{prefix}.b"), vec![d]));
}

fn mlp_shapes(prefix: &str, d: usize, f: usize, out: &mut Vec<(String, Vec<usize>)>) {
    out.push((format!("{prefix}.w1"), vec![d, f]));
    out.push((format!("{prefix}.b1"), vec![f]));
    out.push((format!("{prefix}.w2"), vec![f, d]));
    out.push((format!("{prefix}.b2"), vec![d]));
}

/// Every tensor name with its shape, in initialization order.
pub fn model_shapes(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (c.d_model, c.d_ff);
    let mut out = vec![
        (names::TOK_EMB.to_string(), vec![c.vocab_size, d]),
        (names::POS_EMB.to_string(), vec![c.max_seq_len, d]),
    ];
    if c.has_encoder() {
        for i in 0..c.n_layers {
            ln_shapes(&names::enc(i, "ln1"), d, &mut out);
            attn_shapes(&names::enc(i, "attn"), d, &mut out);
            ln_shapes(&names::enc(i, "ln2"), d, &mut out);
            mlp_shapes(&names::enc(i, "mlp"), d, f, &mut out);
        }
        ln_shapes("enc.lnf", d, &mut out);
    }
    if c.has_decoder() {
        for i in 0..c.n_layers {
            ln_shapes(&names::dec(i, "ln1"), d, &mut out);
            attn_shapes(&names::dec(i, "self"), d, &mut out);
            if c.arch == Arch::EncoderDecoder {
                ln_shapes(&names::dec(i, "lnx"), d, &mut out);
                attn_shapes(&names::dec(i, "cross"), d, &mut out);
            }
            ln_shapes(&names::dec(i, "ln2"), d, &mut out);
            mlp_shapes(&names::dec(i, "mlp"), d, f, &mut out);
        }
        ln_shapes("dec.lnf", d, &mut out);
        out.push((names::HEAD_W.to_string(), vec![d, c.vocab_size]));
        out.push((names::HEAD_B.to_string(), vec![c.vocab_size]));
    }
    out
}

/// Whether a tensor name belongs to the embedding tables or output head.
pub fn is_embedding_or_head(name: &str) -> bool {
    matches!(name, names::TOK_EMB | names::POS_EMB | names::HEAD_W | names::HEAD_B)
}
