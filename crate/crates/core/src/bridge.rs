//! Conditioning a small decoder on a large frozen encoder.
//!
//! The large model encodes the prompt once into `H` (`m × d_l`). A two-layer
//! projector maps `H` to `Z` (`m × d_s`), which is fused into the small
//! model's prompt embedding `E_X` by addition or replacement. The small model
//! then decodes on its own. When the two models use different vocabularies,
//! the small model can read the large model's token ids through a projected
//! copy of the large embedding table and predict them through a new head.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::decoding::StepModel;
use crate::error::{Error, Result};
use crate::model::checkpoint::{init_tensor, names, Checkpoint, CheckpointConfig, Role};
use crate::model::forward::{linear, Bound, TapeModel, TokenEmbedding};
use crate::model::infer::{Flops, Linear, ModelView};
use crate::model::runner::{ProjectedEmbedding, RunState, Runner};
use crate::model::Arch;
use crate::rng;
use crate::tensor::{Scalar, Tensor};
use crate::tokenizer::Vocab;

pub mod param {
    pub const W1: &str = "proj.w1";
    pub const B1: &str = "proj.b1";
    pub const W2: &str = "proj.w2";
    pub const B2: &str = "proj.b2";
    pub const EMBED_W: &str = "embed_proj.w";
    pub const EMBED_B: &str = "embed_proj.b";
    pub const HEAD_W: &str = "new_head.w";
    pub const HEAD_B: &str = "new_head.b";
    pub const SOFT_PROMPT: &str = "soft_prompt";
}

/// Shapes of the trainable conditioning parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub d_llm: usize,
    pub d_slm: usize,
    /// `Linear(d_llm, d_slm) → ReLU → Linear(d_slm, d_slm)`.
    pub projector: bool,
    /// `Linear(d_llm, d_slm)` over the large model's token embeddings.
    pub embed_proj: bool,
    /// Vocabulary of a replacement output head `Linear(d_slm, V)`.
    pub new_head_vocab: Option<usize>,
    /// Rows of a learned soft prompt (prompt-tuning baseline).
    pub soft_prompt_len: Option<usize>,
}

impl BridgeConfig {
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (dl, ds) = (self.d_llm, self.d_slm);
        let mut out = Vec::new();
        if self.projector {
            out.push((param::W1.into(), vec![dl, ds]));
            out.push((param::B1.into(), vec![ds]));
            out.push((param::W2.into(), vec![ds, ds]));
            out.push((param::B2.into(), vec![ds]));
        }
        if self.embed_proj {
            out.push((param::EMBED_W.into(), vec![dl, ds]));
            out.push((param::EMBED_B.into(), vec![ds]));
        }
        if let Some(v) = self.new_head_vocab {
            out.push((param::HEAD_W.into(), vec![ds, v]));
            out.push((param::HEAD_B.into(), vec![v]));
        }
        if let Some(l) = self.soft_prompt_len {
            out.push((param::SOFT_PROMPT.into(), vec![l, ds]));
        }
        out
    }

    pub fn param_count(&self) -> u64 {
        self.shapes().iter().map(|(_, s)| s.iter().product::<usize>() as u64).sum()
    }

    pub fn projector_params(d_llm: usize, d_slm: usize) -> u64 {
        (d_llm * d_slm + d_slm + d_slm * d_slm + d_slm) as u64
    }

    /// FLOPs of projecting `m` rows.
    pub fn projector_flops(&self, m: u64) -> u64 {
        if !self.projector {
            return 0;
        }
        m * 2 * (self.d_llm * self.d_slm + self.d_slm * self.d_slm) as u64
    }
}

/// Fresh bridge parameters, initialized like model weights.
pub fn init_bridge(config: BridgeConfig, seed: u64) -> Checkpoint {
    let mut rng = rng::derive(seed, "bridge");
    let tensors = config
        .shapes()
        .into_iter()
        .map(|(name, shape)| {
            let t = init_tensor(&name, &shape, &mut rng);
            (name, t)
        })
        .collect();
    Checkpoint::from_parts(CheckpointConfig::Bridge(config), Role::Bridge, 0, tensors)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `Z + E_X`; positions are already part of `E_X`.
    #[default]
    Add,
    /// `Z` alone, standing in for the whole prompt embedding.
    Replace,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// Prompt and outputs use the large model's vocabulary.
    #[default]
    LlmShared,
    /// The small model keeps its own vocabulary.
    SlmNative,
}

/// `H`: frozen hidden states of the large model over the prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEncoding {
    pub hidden: Tensor<f32>,
    pub source: Role,
    /// Block after which `hidden` was read; the model depth for encoders.
    pub layer: usize,
}

/// `Z`: projected prompt representation at the small model's width.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedRepr(pub Tensor<f32>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub llm_path: PathBuf,
    pub slm_path: PathBuf,
    pub bridge_path: PathBuf,
    pub fusion: FusionMode,
    pub tokenizer_mode: TokenizerMode,
    pub extraction_layer: Option<usize>,
}

/// Frozen large model + trainable small model + bridge.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridBundle {
    pub llm: Checkpoint,
    pub slm: Checkpoint,
    pub bridge: Checkpoint,
    pub fusion: FusionMode,
    pub tokenizer_mode: TokenizerMode,
    /// Decoder-only large models only: read hidden states after this block.
    pub extraction_layer: Option<usize>,
}

impl HybridBundle {
    pub fn new(
        llm: Checkpoint,
        slm: Checkpoint,
        fusion: FusionMode,
        tokenizer_mode: TokenizerMode,
        extraction_layer: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let (lc, sc) = (llm.model_config()?, slm.model_config()?);
        if !sc.has_decoder() {
            return Err(Error::contract("the small model must be able to decode"));
        }
        match (lc.arch, extraction_layer) {
            (Arch::DecoderOnly, Some(l)) if l > lc.n_layers => {
                return Err(Error::contract(format!("extraction layer {l} exceeds large model depth {}", lc.n_layers)))
            }
            (Arch::DecoderOnly, _) => {}
            (_, Some(l)) if l != lc.n_layers => return Err(Error::contract("encoder prompt encodings are always read at the last layer")),
            _ => {}
        }
        let cross_family = lc.vocab_size != sc.vocab_size;
        let aligned = cross_family && tokenizer_mode == TokenizerMode::LlmShared;
        let config = BridgeConfig {
            d_llm: lc.d_model,
            d_slm: sc.d_model,
            projector: true,
            embed_proj: aligned,
            new_head_vocab: aligned.then_some(lc.vocab_size),
            soft_prompt_len: None,
        };
        let mut llm = llm;
        llm.role = Role::Llm;
        let mut slm = slm;
        slm.role = Role::Slm;
        Ok(Self {
            llm,
            slm,
            bridge: init_bridge(config, seed),
            fusion,
            tokenizer_mode,
            extraction_layer,
        })
    }

    pub fn bridge_config(&self) -> &BridgeConfig {
        self.bridge.bridge_config().expect("bundle bridge has a bridge config")
    }

    pub fn llm_config(&self) -> &crate::model::ModelConfig {
        self.llm.model_config().expect("llm is a model")
    }

    pub fn slm_config(&self) -> &crate::model::ModelConfig {
        self.slm.model_config().expect("slm is a model")
    }

    pub fn cross_family(&self) -> bool {
        self.llm_config().vocab_size != self.slm_config().vocab_size
    }

    /// Whether embed_proj/new_head are in use.
    pub fn aligned(&self) -> bool {
        self.bridge_config().embed_proj
    }

    /// Non-embedding parameter ratio large / small.
    pub fn size_ratio(&self) -> f64 {
        self.llm_config().param_count(false) as f64 / self.slm_config().param_count(false) as f64
    }

    /// Vocabulary of the ids the bundle reads and writes.
    pub fn output_vocab_size(&self) -> usize {
        if self.aligned() || !self.cross_family() {
            self.llm_config().vocab_size
        } else {
            self.slm_config().vocab_size
        }
    }

    pub fn extraction_depth(&self) -> usize {
        let lc = self.llm_config();
        match lc.arch {
            Arch::DecoderOnly => self.extraction_layer.unwrap_or(lc.n_layers),
            _ => lc.n_layers,
        }
    }

    /// Single pass of the frozen large model over the prompt.
    pub fn encode_prompt(&self, prompt: &[u32], flops: &mut Flops) -> Result<PromptEncoding> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let view = ModelView::new(&self.llm)?;
        let lc = view.config;
        if prompt.len() > lc.max_seq_len {
            return Err(Error::Length {
                len: prompt.len(),
                max: lc.max_seq_len,
            });
        }
        let x = view.embed(prompt, 0..prompt.len())?;
        let layer = self.extraction_depth();
        let hidden = match lc.arch {
            Arch::DecoderOnly => view.causal_hidden_at(x, layer, flops)?,
            _ => view.encode_rows(x, flops)?,
        };
        Ok(PromptEncoding {
            hidden: Tensor::matrix(prompt.len(), lc.d_model, hidden)?,
            source: Role::Llm,
            layer,
        })
    }

    /// FLOPs of the large-model prompt pass plus projector for `m` rows.
    pub fn conditioning_flops(&self, m: u64) -> u64 {
        let lc = self.llm_config();
        let llm = match lc.arch {
            Arch::DecoderOnly => m * self.extraction_depth() as u64 * lc.decoder_block_flops_per_token(),
            _ => lc.encoder_prefill_flops(m),
        };
        llm + self.bridge_config().projector_flops(m)
    }

    /// Closed-form linear FLOPs of generating `n` tokens after `m` prompt
    /// tokens with KV caching.
    pub fn flops(&self, m: u64, n: u64) -> u64 {
        let sc = self.slm_config();
        let bc = self.bridge_config();
        let mut total = self.conditioning_flops(m) + sc.prefill_flops(m) + n * sc.decode_step_flops();
        if bc.embed_proj {
            let per_row = 2 * (bc.d_llm * bc.d_slm) as u64;
            let prompt_rows = if self.fusion == FusionMode::Add { m } else { 0 };
            total += (prompt_rows + n) * per_row;
        }
        if let Some(v) = bc.new_head_vocab {
            total = total - n * sc.head_flops() + n * 2 * (bc.d_slm * v) as u64;
        }
        total
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.llm.save(dir.join("llm.ckpt"))?;
        self.slm.save(dir.join("slm.ckpt"))?;
        self.bridge.save(dir.join("bridge.ckpt"))?;
        let manifest = BundleManifest {
            llm_path: "llm.ckpt".into(),
            slm_path: "slm.ckpt".into(),
            bridge_path: "bridge.ckpt".into(),
            fusion: self.fusion,
            tokenizer_mode: self.tokenizer_mode,
            extraction_layer: self.extraction_layer,
        };
        let path = dir.join("bundle.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(path)
    }

    /// Loads a manifest; relative checkpoint paths resolve against its
    /// directory.
    pub fn load(manifest: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest.as_ref();
        let m: BundleManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        Ok(Self {
            llm: Checkpoint::load(resolve(&m.llm_path))?,
            slm: Checkpoint::load(resolve(&m.slm_path))?,
            bridge: Checkpoint::load(resolve(&m.bridge_path))?,
            fusion: m.fusion,
            tokenizer_mode: m.tokenizer_mode,
            extraction_layer: m.extraction_layer,
        })
    }
}

/// `Linear(d_l, d_s) → ReLU → Linear(d_s, d_s)` over borrowed weights.
#[derive(Clone, Copy, Debug)]
pub struct Projector<'a> {
    first: Linear<'a>,
    second: Linear<'a>,
}

impl<'a> Projector<'a> {
    pub fn new(bridge: &'a Checkpoint) -> Result<Self> {
        Ok(Self {
            first: Linear::from_ckpt(bridge, param::W1, param::B1)?,
            second: Linear::from_ckpt(bridge, param::W2, param::B2)?,
        })
    }

    pub fn project(&self, h: &PromptEncoding, flops: &mut Flops) -> Result<ProjectedRepr> {
        let hid = &h.hidden;
        if hid.cols() != self.first.din {
            return Err(Error::dim("project", hid.shape(), &[hid.rows(), self.first.din]));
        }
        let rows = hid.rows();
        let mut a = self.first.apply(hid.data(), rows, flops);
        for v in a.iter_mut() {
            *v = v.max(0.0);
        }
        let z = self.second.apply(&a, rows, flops);
        Ok(ProjectedRepr(Tensor::matrix(rows, self.second.dout, z)?))
    }
}

/// Projects `H` with the bridge's projector.
pub fn project(bridge: &Checkpoint, h: &PromptEncoding, flops: &mut Flops) -> Result<ProjectedRepr> {
    Projector::new(bridge)?.project(h, flops)
}

/// Combines `Z` with the small model's prompt embedding `E_X`.
pub fn fuse(mode: FusionMode, z: &ProjectedRepr, e_x: &Tensor<f32>) -> Result<Tensor<f32>> {
    match mode {
        FusionMode::Replace => Ok(z.0.clone()),
        FusionMode::Add => {
            if z.0.rows() != e_x.rows() {
                return Err(Error::Alignment(format!(
                    "projected prompt has {} rows but the small model's prompt has {}",
                    z.0.rows(),
                    e_x.rows()
                )));
            }
            z.0.add(e_x)
        }
    }
}

/// Inputs the small model consumes for one prompt and decoded prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct SlmInputs {
    /// Fused prompt rows (`m × d_s`): encoder input for encoder-decoder
    /// models, head of the causal stream for decoder-only models.
    pub prompt_rows: Tensor<f32>,
    /// Positions the prompt occupies; decoder positions continue from here
    /// in decoder-only models.
    pub prompt_positions: usize,
    /// Decoder input ids: the start token then everything decoded so far.
    pub decoder_ids: Vec<u32>,
    /// Embedded decoder inputs.
    pub decoder_rows: Tensor<f32>,
}

impl SlmInputs {
    /// Total rows of the causal stream for decoder-only models.
    pub fn stream_len(&self) -> usize {
        self.prompt_rows.rows() + self.decoder_rows.rows()
    }
}

/// Inference-time view of a bundle: a runner over the small model with the
/// bundle's embedding/head replacements, plus the projector.
#[derive(Clone, Debug)]
pub struct HybridModel<'a> {
    bundle: &'a HybridBundle,
    runner: Runner<'a>,
    projector: Projector<'a>,
    llm_vocab: Vocab,
    slm_vocab: Vocab,
}

impl<'a> HybridModel<'a> {
    pub fn new(bundle: &'a HybridBundle) -> Result<Self> {
        Self::with_caching(bundle, true)
    }

    pub fn with_caching(bundle: &'a HybridBundle, cached: bool) -> Result<Self> {
        let mut runner = Runner::new(&bundle.slm, cached)?;
        if bundle.aligned() {
            runner.embedding = Some(ProjectedEmbedding {
                table: bundle.llm.get(names::TOK_EMB)?,
                proj: Linear::from_ckpt(&bundle.bridge, param::EMBED_W, param::EMBED_B)?,
            });
            runner.head = Linear::from_ckpt(&bundle.bridge, param::HEAD_W, param::HEAD_B)?;
        }
        Ok(Self {
            bundle,
            runner,
            projector: Projector::new(&bundle.bridge)?,
            llm_vocab: Vocab::for_size(bundle.llm_config().vocab_size)?,
            slm_vocab: Vocab::for_size(bundle.slm_config().vocab_size)?,
        })
    }

    pub fn bundle(&self) -> &HybridBundle {
        self.bundle
    }

    /// Prompt ids as the small model sees them.
    fn slm_prompt_ids(&self, prompt: &[u32]) -> Result<Vec<u32>> {
        if self.bundle.aligned() || !self.bundle.cross_family() {
            Ok(prompt.to_vec())
        } else {
            let text = self.llm_vocab.decode(prompt)?;
            self.slm_vocab.encode(&text, false).map_err(|e| Error::Alignment(e.to_string()))
        }
    }

    /// Fused prompt rows for a prompt given in the large model's vocabulary.
    pub fn fused_prompt(&self, prompt: &[u32], h: &PromptEncoding, flops: &mut Flops) -> Result<Tensor<f32>> {
        let z = self.projector.project(h, flops)?;
        match self.bundle.fusion {
            FusionMode::Replace => fuse(FusionMode::Replace, &z, &z.0),
            FusionMode::Add => {
                let ids = self.slm_prompt_ids(prompt)?;
                let e = self.runner.embed_tokens(&ids, 0, flops)?;
                let e_x = Tensor::matrix(ids.len(), self.runner.d_model(), e)?;
                fuse(FusionMode::Add, &z, &e_x)
            }
        }
    }

    /// Model inputs for a prompt and the tokens decoded so far.
    pub fn build_slm_inputs(&self, prompt: &[u32], decoded: &[u32], flops: &mut Flops) -> Result<SlmInputs> {
        let h = self.bundle.encode_prompt(prompt, flops)?;
        let rows = self.fused_prompt(prompt, &h, flops)?;
        let prompt_positions = match self.bundle.slm_config().arch {
            Arch::DecoderOnly => rows.rows(),
            _ => 0,
        };
        let mut ids = vec![crate::tokenizer::BOS];
        ids.extend_from_slice(decoded);
        let dec = self.runner.embed_tokens(&ids, prompt_positions, flops)?;
        Ok(SlmInputs {
            decoder_rows: Tensor::matrix(ids.len(), self.runner.d_model(), dec)?,
            prompt_positions,
            prompt_rows: rows,
            decoder_ids: ids,
        })
    }

    /// Starts generation from a precomputed prompt encoding.
    pub fn start_with_encoding(&self, prompt: &[u32], h: &PromptEncoding, flops: &mut Flops) -> Result<RunState> {
        let rows = self.fused_prompt(prompt, h, flops)?;
        let m = rows.rows();
        self.runner.start(rows.into_data(), m, flops)
    }
}

impl StepModel for HybridModel<'_> {
    type State = RunState;

    fn vocab_size(&self) -> usize {
        self.runner.vocab_size()
    }

    fn max_new_tokens(&self, prompt_len: usize) -> usize {
        self.runner.max_new_tokens(prompt_len)
    }

    fn start(&self, prompt: &[u32], flops: &mut Flops) -> Result<RunState> {
        let h = self.bundle.encode_prompt(prompt, flops)?;
        self.start_with_encoding(prompt, &h, flops)
    }

    fn feed(&self, state: &mut RunState, tokens: &[u32], all_rows: bool, flops: &mut Flops) -> Result<Vec<Vec<f32>>> {
        self.runner.feed(state, tokens, all_rows, flops)
    }

    fn fed_len(&self, state: &RunState) -> usize {
        state.fed().len()
    }

    fn rollback(&self, state: &mut RunState, fed_len: usize) {
        self.runner.rollback(state, fed_len)
    }
}

/// Small model with a learned soft prompt prepended to its prompt embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTuned {
    pub slm: Checkpoint,
    pub prompt: Checkpoint,
}

impl PromptTuned {
    pub fn new(slm: Checkpoint, len: usize, seed: u64) -> Result<Self> {
        let d = slm.model_config()?.d_model;
        let config = BridgeConfig {
            d_llm: d,
            d_slm: d,
            projector: false,
            embed_proj: false,
            new_head_vocab: None,
            soft_prompt_len: Some(len),
        };
        Ok(Self {
            slm,
            prompt: init_bridge(config, seed),
        })
    }

    pub fn soft_prompt(&self) -> &Tensor<f32> {
        self.prompt.get(param::SOFT_PROMPT).expect("soft prompt present")
    }

    pub fn trainable_params(&self) -> usize {
        self.soft_prompt().numel()
    }
}

#[derive(Clone, Debug)]
pub struct PromptTunedModel<'a> {
    tuned: &'a PromptTuned,
    runner: Runner<'a>,
}

impl<'a> PromptTunedModel<'a> {
    pub fn new(tuned: &'a PromptTuned) -> Result<Self> {
        Ok(Self {
            tuned,
            runner: Runner::new(&tuned.slm, true)?,
        })
    }
}

impl StepModel for PromptTunedModel<'_> {
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
        let mut rows = self.tuned.soft_prompt().data().to_vec();
        rows.extend(self.runner.embed_tokens(prompt, 0, flops)?);
        self.runner.start(rows, prompt.len(), flops)
    }

    fn feed(&self, state: &mut RunState, tokens: &[u32], all_rows: bool, flops: &mut Flops) -> Result<Vec<Vec<f32>>> {
        self.runner.feed(state, tokens, all_rows, flops)
    }

    fn fed_len(&self, state: &RunState) -> usize {
        state.fed().len()
    }

    fn rollback(&self, state: &mut RunState, fed_len: usize) {
        self.runner.rollback(state, fed_len)
    }
}

/// Bridge parameters on a tape.
#[derive(Clone, Debug)]
pub struct TapeBridge {
    params: Bound,
}

impl TapeBridge {
    pub fn bind<T: Scalar>(tape: &mut Tape<T>, bridge: &Checkpoint, trainable: bool) -> Self {
        Self {
            params: Bound::bind(tape, bridge, trainable),
        }
    }

    pub fn params(&self) -> &Bound {
        &self.params
    }

    pub fn project<T: Scalar>(&self, tape: &mut Tape<T>, h: Var) -> Result<Var> {
        let a = linear(tape, h, self.params.get(param::W1)?, self.params.get(param::B1)?)?;
        let a = tape.relu(a);
        linear(tape, a, self.params.get(param::W2)?, self.params.get(param::B2)?)
    }

    pub fn soft_prompt(&self) -> Result<Var> {
        self.params.get(param::SOFT_PROMPT)
    }

    /// Installs the embedding projection and replacement head on `slm`.
    pub fn align<T: Scalar>(&self, tape: &mut Tape<T>, slm: &mut TapeModel<'_>, llm: &Checkpoint) -> Result<()> {
        let table = tape.constant(llm.get(names::TOK_EMB)?.cast());
        slm.embedding = TokenEmbedding::Projected {
            table,
            w: self.params.get(param::EMBED_W)?,
            b: self.params.get(param::EMBED_B)?,
        };
        slm.head = Some((self.params.get(param::HEAD_W)?, self.params.get(param::HEAD_B)?));
        Ok(())
    }
}
