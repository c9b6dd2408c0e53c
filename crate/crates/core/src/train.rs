//! Teacher-forced training with AdamW, linear warmup and cosine decay.
//!
//! The large model of a bundle is never bound as a trainable tensor: its
//! prompt encodings are computed on the inference path once per example and
//! enter the tape as constants.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::bridge::{FusionMode, HybridBundle, PromptTuned, TapeBridge};
use crate::decoding::{generate, GenerationParams, StepModel};
use crate::error::{Error, Result};
use crate::model::forward::TapeModel;
use crate::model::infer::Flops;
use crate::model::{Arch, Checkpoint, PlainModel};
use crate::rng;
use crate::tasks::{Example, LabelSource};
use crate::tensor::Tensor;
use crate::tokenizer::Vocab;

/// Label value that cross-entropy skips.
pub const IGNORE: usize = usize::MAX;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// A plain model, every tensor trainable.
    #[default]
    SlmBaseline,
    /// Small model and bridge.
    Llm2slmFull,
    /// Bridge only; the small model stays fixed.
    ProjectorOnly,
    /// A soft prompt in front of a fixed small model.
    PromptTuningBaseline,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelChoice {
    #[default]
    GroundTruth,
    LlmGenerated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub total_steps: usize,
    pub micro_batch: usize,
    pub accumulation: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub label_source: LabelChoice,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip_norm: f64,
    /// Soft prompt rows for the prompt-tuning baseline.
    pub prompt_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_base: 1e-3,
            weight_decay: 0.1,
            warmup_frac: 0.1,
            total_steps: 1000,
            micro_batch: 32,
            accumulation: 4,
            seed: 0,
            mode: TrainMode::SlmBaseline,
            label_source: LabelChoice::GroundTruth,
            clip_norm: 1.0,
            prompt_len: 16,
        }
    }
}

impl TrainConfig {
    pub fn effective_batch(&self) -> usize {
        self.micro_batch * self.accumulation
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::contract("warmup fraction must lie in (0, 1)"));
        }
        if self.micro_batch == 0 || self.accumulation == 0 {
            return Err(Error::contract("micro batch and accumulation must be positive"));
        }
        Ok(())
    }
}

/// Linear warmup over `warmup_frac · total` steps, then cosine decay to 0.
pub fn lr_at(step: usize, total: usize, base: f64, warmup_frac: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warm = warmup_frac * total as f64;
    let s = step as f64;
    if s < warm {
        return base * s / warm;
    }
    let progress = ((s - warm) / (total as f64 - warm)).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// AdamW moments keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimState {
    /// Advances the step counter; call once per update before
    /// [`OptimState::update`] on each parameter.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One decoupled-decay AdamW update of `param` in place.
    pub fn update(&mut self, name: &str, param: &mut [f32], grad: &[f32], lr: f64, wd: f64) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::dim("adamw", &[param.len()], &[grad.len()]));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; param.len()], vec![0.0; param.len()]));
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for i in 0..param.len() {
            let g = f64::from(grad[i]);
            let mi = BETA1 * f64::from(m[i]) + (1.0 - BETA1) * g;
            let vi = BETA2 * f64::from(v[i]) + (1.0 - BETA2) * g * g;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let mut p = f64::from(param[i]);
            p -= lr * wd * p;
            p -= lr * (mi / c1) / ((vi / c2).sqrt() + ADAM_EPS);
            param[i] = p as f32;
        }
        Ok(())
    }
}

/// What a training run updates.
#[derive(Clone, Debug, PartialEq)]
pub enum Trainee {
    Model(Checkpoint),
    Hybrid(HybridBundle),
    PromptTuned(PromptTuned),
}

impl Trainee {
    fn check_mode(&self, mode: TrainMode) -> Result<()> {
        let ok = matches!(
            (self, mode),
            (Trainee::Model(_), TrainMode::SlmBaseline)
                | (Trainee::Hybrid(_), TrainMode::Llm2slmFull | TrainMode::ProjectorOnly)
                | (Trainee::PromptTuned(_), TrainMode::PromptTuningBaseline)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("mode {mode:?} does not apply to this model")))
        }
    }

    /// Vocabulary of prompts as handed to generation.
    pub fn input_vocab(&self) -> Result<Vocab> {
        match self {
            Trainee::Model(ck) => Vocab::for_size(ck.model_config()?.vocab_size),
            Trainee::Hybrid(b) => Vocab::for_size(b.llm_config().vocab_size),
            Trainee::PromptTuned(p) => Vocab::for_size(p.slm.model_config()?.vocab_size),
        }
    }

    pub fn output_vocab(&self) -> Result<Vocab> {
        match self {
            Trainee::Hybrid(b) => Vocab::for_size(b.output_vocab_size()),
            _ => self.input_vocab(),
        }
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub fn write_loss_trace<W: Write>(trace: &[LossRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

struct Encoded {
    /// Small-model prompt ids.
    prompt: Vec<u32>,
    /// Target ids followed by EOS.
    target: Vec<u32>,
    /// Frozen prompt encoding for bundles.
    hidden: Option<Tensor<f32>>,
}

fn encode_examples(trainee: &Trainee, data: &[Example]) -> Result<Vec<Encoded>> {
    let (input, output) = (trainee.input_vocab()?, trainee.output_vocab()?);
    data.iter()
        .map(|e| {
            let ids = input.encode(e.prompt.as_bytes(), false)?;
            let target = output.encode(e.target.as_bytes(), true)?;
            match trainee {
                Trainee::Hybrid(b) => {
                    let h = b.encode_prompt(&ids, &mut Flops::default())?.hidden;
                    let prompt = if b.aligned() || !b.cross_family() {
                        ids
                    } else {
                        Vocab::for_size(b.slm_config().vocab_size)?
                            .encode(e.prompt.as_bytes(), false)
                            .map_err(|err| Error::Alignment(err.to_string()))?
                    };
                    Ok(Encoded {
                        prompt,
                        target,
                        hidden: Some(h),
                    })
                }
                _ => Ok(Encoded {
                    prompt: ids,
                    target,
                    hidden: None,
                }),
            }
        })
        .collect()
}

/// Mean cross-entropy of one example's target tokens.
fn example_loss(tape: &mut Tape<f32>, model: &TapeModel<'_>, prefix: Var, prompt_positions: usize, target: &[u32]) -> Result<Var> {
    let logits = model.decoder_logits(tape, prefix, prompt_positions, &target[..target.len() - 1])?;
    let labels: Vec<usize> = target.iter().map(|&t| t as usize).collect();
    tape.cross_entropy(logits, &labels, IGNORE)
}

fn prompt_positions(model: &TapeModel<'_>, prompt_len: usize) -> usize {
    match model.config.arch {
        Arch::DecoderOnly => prompt_len,
        _ => 0,
    }
}

/// Summed-gradient buffers keyed by `group/name`.
type GradMap = BTreeMap<String, Vec<f32>>;

fn collect(tape: &Tape<f32>, loss: Var, bound: &[(&str, &crate::model::forward::Bound)], into: &mut GradMap) -> Result<f64> {
    let grads = tape.backward(loss)?;
    for (group, b) in bound {
        for (name, var) in b.iter() {
            if let Some(g) = grads.get(*var) {
                let buf = into.entry(format!("{group}/{name}")).or_insert_with(|| vec![0.0; g.numel()]);
                for (a, v) in buf.iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
        }
    }
    Ok(f64::from(tape.value(loss).data()[0]))
}

/// `(1/B) Σ` per-example losses of one micro-batch; returns the loss value.
fn micro_batch(trainee: &Trainee, mode: TrainMode, batch: &[&Encoded], scale: f64, grads: &mut GradMap) -> Result<f64> {
    let mut tape = Tape::<f32>::new();
    let mut terms = Vec::with_capacity(batch.len());
    match trainee {
        Trainee::Model(ck) => {
            let model = TapeModel::new(&mut tape, ck, true)?;
            for ex in batch {
                let prefix = model.embed(&mut tape, &ex.prompt, 0)?;
                let pp = prompt_positions(&model, ex.prompt.len());
                let l = example_loss(&mut tape, &model, prefix, pp, &ex.target)?;
                terms.push(tape.scale(l, scale));
            }
            let loss = sum_terms(&mut tape, &terms)?;
            collect(&tape, loss, &[("slm", &model.params)], grads)
        }
        Trainee::Hybrid(b) => {
            let mut model = TapeModel::new(&mut tape, &b.slm, mode == TrainMode::Llm2slmFull)?;
            let bridge = TapeBridge::bind(&mut tape, &b.bridge, true);
            if b.aligned() {
                bridge.align(&mut tape, &mut model, &b.llm)?;
            }
            for ex in batch {
                let h = tape.constant(ex.hidden.clone().expect("bundle examples carry encodings"));
                let z = bridge.project(&mut tape, h)?;
                let prefix = match b.fusion {
                    FusionMode::Add => {
                        let e = model.embed(&mut tape, &ex.prompt, 0)?;
                        if tape.value(e).rows() != tape.value(z).rows() {
                            return Err(Error::Alignment(format!(
                                "{} prompt rows against {} projected rows",
                                tape.value(e).rows(),
                                tape.value(z).rows()
                            )));
                        }
                        tape.add(z, e)?
                    }
                    FusionMode::Replace => z,
                };
                let pp = prompt_positions(&model, ex.prompt.len());
                let l = example_loss(&mut tape, &model, prefix, pp, &ex.target)?;
                terms.push(tape.scale(l, scale));
            }
            let loss = sum_terms(&mut tape, &terms)?;
            collect(&tape, loss, &[("slm", &model.params), ("bridge", bridge.params())], grads)
        }
        Trainee::PromptTuned(p) => {
            let model = TapeModel::new(&mut tape, &p.slm, false)?;
            let bridge = TapeBridge::bind(&mut tape, &p.prompt, true);
            let soft = bridge.soft_prompt()?;
            for ex in batch {
                let e = model.embed(&mut tape, &ex.prompt, 0)?;
                let prefix = tape.concat_rows(&[soft, e])?;
                let pp = prompt_positions(&model, ex.prompt.len());
                let l = example_loss(&mut tape, &model, prefix, pp, &ex.target)?;
                terms.push(tape.scale(l, scale));
            }
            let loss = sum_terms(&mut tape, &terms)?;
            collect(&tape, loss, &[("bridge", bridge.params())], grads)
        }
    }
}

fn sum_terms(tape: &mut Tape<f32>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = tape.add(acc, *t)?;
    }
    Ok(acc)
}

fn trainable_groups(trainee: &mut Trainee, mode: TrainMode) -> Vec<(&'static str, &mut Checkpoint)> {
    match trainee {
        Trainee::Model(ck) => vec![("slm", ck)],
        Trainee::Hybrid(b) => {
            let HybridBundle { slm, bridge, .. } = b;
            if mode == TrainMode::Llm2slmFull {
                vec![("slm", slm), ("bridge", bridge)]
            } else {
                vec![("bridge", bridge)]
            }
        }
        Trainee::PromptTuned(p) => vec![("bridge", &mut p.prompt)],
    }
}

/// Trains `trainee` in place and returns the per-step loss trace.
pub fn train(trainee: &mut Trainee, data: &[Example], cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    trainee.check_mode(cfg.mode)?;
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let wanted = match cfg.label_source {
        LabelChoice::GroundTruth => LabelSource::GroundTruth,
        LabelChoice::LlmGenerated => LabelSource::Generated,
    };
    if data.iter().any(|e| e.source != wanted) {
        return Err(Error::contract(format!(
            "label source {:?} requested but the dataset mixes other labels",
            cfg.label_source
        )));
    }
    if cfg.total_steps == 0 {
        return Ok(Vec::new());
    }
    let encoded = encode_examples(trainee, data)?;
    let mut order_rng = rng::derive(cfg.seed, "batches");
    let mut order: Vec<usize> = Vec::new();
    let mut opt = OptimState::default();
    let b_eff = cfg.effective_batch();
    let mut trace = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let mut batch = Vec::with_capacity(b_eff);
        while batch.len() < b_eff {
            if order.is_empty() {
                order = (0..encoded.len()).collect();
                order.shuffle(&mut order_rng);
                order.reverse();
            }
            batch.push(&encoded[order.pop().expect("refilled")]);
        }
        let mut grads = GradMap::new();
        let mut loss = 0.0;
        for micro in batch.chunks(cfg.micro_batch) {
            loss += micro_batch(trainee, cfg.mode, micro, 1.0 / b_eff as f64, &mut grads)?;
        }
        for (name, g) in &grads {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        if cfg.clip_norm > 0.0 {
            let norm = grads.values().flat_map(|g| g.iter()).map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
            if norm > cfg.clip_norm {
                let s = (cfg.clip_norm / norm) as f32;
                grads.values_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
            }
        }
        let lr = lr_at(step + 1, cfg.total_steps, cfg.lr_base, cfg.warmup_frac);
        opt.begin_step();
        for (group, ck) in trainable_groups(trainee, cfg.mode) {
            for (name, t) in ck.tensors_mut().iter_mut() {
                let key = format!("{group}/{name}");
                if let Some(g) = grads.get(&key) {
                    opt.update(&key, t.data_mut(), g, lr, cfg.weight_decay)?;
                }
            }
            ck.step += 1;
        }
        trace.push(LossRecord { step, lr, loss });
    }
    Ok(trace)
}

/// Mean per-example loss over `data` without updating anything.
pub fn evaluate_loss(trainee: &Trainee, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let encoded = encode_examples(trainee, data)?;
    let mode = match trainee {
        Trainee::Model(_) => TrainMode::SlmBaseline,
        Trainee::Hybrid(_) => TrainMode::Llm2slmFull,
        Trainee::PromptTuned(_) => TrainMode::PromptTuningBaseline,
    };
    let refs: Vec<&Encoded> = encoded.iter().collect();
    let mut total = 0.0;
    for chunk in refs.chunks(32) {
        total += micro_batch(trainee, mode, chunk, 1.0 / refs.len() as f64, &mut GradMap::new())?;
    }
    Ok(total)
}

/// Decodes each prompt with `model` and returns the output texts (up to EOS).
pub fn predict<M: StepModel>(model: &M, input: &Vocab, output: &Vocab, data: &[Example], params: &GenerationParams) -> Result<Vec<String>> {
    data.iter()
        .map(|e| {
            let ids = input.encode(e.prompt.as_bytes(), false)?;
            let out = generate(model, &ids, params)?;
            Ok(String::from_utf8_lossy(&output.decode_until_eos(&out)?).into_owned())
        })
        .collect()
}

/// Replaces targets with the large model's own outputs.
pub fn generate_labels(llm: &Checkpoint, prompts: &[Example], params: &GenerationParams) -> Result<Vec<Example>> {
    let vocab = Vocab::for_size(llm.model_config()?.vocab_size)?;
    let model = PlainModel::new(llm)?;
    let texts = predict(&model, &vocab, &vocab, prompts, params)?;
    Ok(prompts
        .iter()
        .zip(texts)
        .map(|(e, t)| Example {
            prompt: e.prompt.clone(),
            target: t,
            source: LabelSource::Generated,
        })
        .collect())
}

/// Number of trainable scalars under `mode`.
pub fn trainable_params(trainee: &Trainee, mode: TrainMode) -> usize {
    match (trainee, mode) {
        (Trainee::Model(ck), _) => ck.num_params(),
        (Trainee::Hybrid(b), TrainMode::Llm2slmFull) => b.slm.num_params() + b.bridge.num_params(),
        (Trainee::Hybrid(b), _) => b.bridge.num_params(),
        (Trainee::PromptTuned(p), _) => p.prompt.num_params(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::TokenizerMode;
    use crate::model::{ModelConfig, Role};
    use crate::tasks::{generate_task, TaskKind, TaskSpec};
    use crate::tokenizer::EOS;

    #[test]
    fn lr_schedule_examples() {
        assert_eq!(lr_at(0, 1000, 1e-3, 0.1), 0.0);
        assert!((lr_at(100, 1000, 1e-3, 0.1) - 1e-3).abs() < 1e-15);
        assert!(lr_at(1000, 1000, 1e-3, 0.1).abs() < 1e-15);
        assert!((lr_at(50, 1000, 1e-3, 0.1) - 5e-4).abs() < 1e-15);
        assert!((lr_at(550, 1000, 1e-3, 0.1) - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn adamw_zero_grad() {
        let mut p = vec![1.0f32, -2.0];
        let mut s = OptimState::default();
        s.begin_step();
        s.update("p", &mut p, &[0.0, 0.0], 0.01, 0.0).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        s.update("q", &mut p, &[0.0, 0.0], 0.01, 0.1).unwrap();
        assert_eq!(p, vec![0.999, -1.998]);
    }

    #[test]
    fn adamw_matches_hand_recurrence() {
        let (lr, wd) = (0.1, 0.01);
        let grads = [0.5f64, -0.25];
        let mut p = [2.0f32];
        let mut s = OptimState::default();
        let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            s.begin_step();
            s.update("x", &mut p, &[*g as f32], lr, wd).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x = x - lr * wd * x - lr * mh / (vh.sqrt() + 1e-8);
        }
        assert!((f64::from(p[0]) - x).abs() < 1e-6);
    }

    #[test]
    fn adamw_rejects_non_finite() {
        let mut s = OptimState::default();
        s.begin_step();
        let err = s.update("enc.0.w", &mut [1.0], &[f32::NAN], 0.1, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(n) if n == "enc.0.w"));
    }

    fn data(n: usize) -> Vec<Example> {
        let spec = TaskSpec {
            kind: TaskKind::ReversalTranslation,
            alphabet: "abcd".into(),
            min_len: 2,
            max_len: 4,
            train_size: n,
            test_size: 0,
            ..TaskSpec::default()
        };
        generate_task(&spec).unwrap().0
    }

    fn small(arch: Arch, seed: u64) -> Checkpoint {
        Checkpoint::init(ModelConfig::new(arch, 16, 1, 2, 259, 32), Role::Slm, seed).unwrap()
    }

    fn cfg(steps: usize, micro: usize, accum: usize, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            total_steps: steps,
            micro_batch: micro,
            accumulation: accum,
            mode,
            lr_base: 1e-2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let ck = small(Arch::DecoderOnly, 1);
        let mut t = Trainee::Model(ck.clone());
        train(&mut t, &data(8), &cfg(0, 2, 1, TrainMode::SlmBaseline)).unwrap();
        assert_eq!(t, Trainee::Model(ck));
    }

    #[test]
    fn accumulation_is_equivalent_to_large_batch() {
        for arch in [Arch::DecoderOnly, Arch::EncoderDecoder] {
            let d = data(16);
            let mut a = Trainee::Model(small(arch, 2));
            let mut b = a.clone();
            train(&mut a, &d, &cfg(3, 2, 4, TrainMode::SlmBaseline)).unwrap();
            train(&mut b, &d, &cfg(3, 8, 1, TrainMode::SlmBaseline)).unwrap();
            let (Trainee::Model(a), Trainee::Model(b)) = (a, b) else { unreachable!() };
            for (name, t) in a.tensors() {
                let diff = t.max_abs_diff(b.get(name).unwrap());
                assert!(diff < 1e-5, "{name}: {diff}");
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let d = data(32);
        let mut a = Trainee::Model(small(Arch::EncoderDecoder, 3));
        let mut b = a.clone();
        let before = evaluate_loss(&a, &d).unwrap();
        let ta = train(&mut a, &d, &cfg(60, 8, 1, TrainMode::SlmBaseline)).unwrap();
        let tb = train(&mut b, &d, &cfg(60, 8, 1, TrainMode::SlmBaseline)).unwrap();
        assert_eq!(ta, tb);
        let (Trainee::Model(ca), Trainee::Model(cb)) = (&a, &b) else { unreachable!() };
        assert!(ca.bit_equal(cb));
        assert!(evaluate_loss(&a, &d).unwrap() < before * 0.7);
    }

    #[test]
    fn loss_covers_target_rows_only() {
        // Equal to full-stream cross-entropy with every prompt row masked.
        let ck = small(Arch::DecoderOnly, 4);
        let prompt = [10u32, 11, 12, 13];
        let target = [20u32, 21, EOS];
        let mut tape = Tape::<f32>::new();
        let model = TapeModel::new(&mut tape, &ck, true).unwrap();
        let prefix = model.embed(&mut tape, &prompt, 0).unwrap();
        let logits = model.teacher_forced(&mut tape, prefix, 4, &target[..2], false).unwrap();
        let mut labels = vec![IGNORE; prompt.len()];
        labels.extend(target.iter().map(|&t| t as usize));
        let full = tape.cross_entropy(logits, &labels, IGNORE).unwrap();
        let ours = example_loss(&mut tape, &model, prefix, 4, &target).unwrap();
        let (f, o) = (tape.value(full).data()[0], tape.value(ours).data()[0]);
        assert!((f - o).abs() < 1e-6, "{f} vs {o}");
    }

    fn bundle() -> HybridBundle {
        let llm = Checkpoint::init(ModelConfig::new(Arch::EncoderDecoder, 24, 1, 2, 259, 32), Role::Llm, 9).unwrap();
        HybridBundle::new(llm, small(Arch::DecoderOnly, 5), FusionMode::Add, TokenizerMode::LlmShared, None, 1).unwrap()
    }

    #[test]
    fn freeze_contracts() {
        let d = data(16);
        let orig = bundle();

        let mut t = Trainee::Hybrid(orig.clone());
        train(&mut t, &d, &cfg(5, 4, 1, TrainMode::ProjectorOnly)).unwrap();
        let Trainee::Hybrid(b) = &t else { unreachable!() };
        assert!(b.llm.bit_equal(&orig.llm));
        assert_eq!(b.slm.tensors(), orig.slm.tensors());
        assert_ne!(b.bridge.tensors(), orig.bridge.tensors());

        let mut t = Trainee::Hybrid(orig.clone());
        train(&mut t, &d, &cfg(5, 4, 1, TrainMode::Llm2slmFull)).unwrap();
        let Trainee::Hybrid(b) = &t else { unreachable!() };
        assert!(b.llm.bit_equal(&orig.llm));
        assert_ne!(b.slm.tensors(), orig.slm.tensors());

        let pt = PromptTuned::new(small(Arch::DecoderOnly, 6), 4, 0).unwrap();
        let mut t = Trainee::PromptTuned(pt.clone());
        train(&mut t, &d, &cfg(5, 4, 1, TrainMode::PromptTuningBaseline)).unwrap();
        let Trainee::PromptTuned(p) = &t else { unreachable!() };
        assert_eq!(p.slm.tensors(), pt.slm.tensors());
        assert_ne!(p.soft_prompt(), pt.soft_prompt());
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let mut t = Trainee::Model(small(Arch::DecoderOnly, 1));
        let err = train(&mut t, &data(4), &cfg(1, 2, 1, TrainMode::ProjectorOnly));
        assert!(matches!(err, Err(Error::Contract(_))));
        let mut t = Trainee::Hybrid(bundle());
        let err = train(&mut t, &data(4), &cfg(1, 2, 1, TrainMode::SlmBaseline));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn generated_labels_are_deterministic() {
        let llm = small(Arch::EncoderDecoder, 7);
        let d = data(6);
        let p = GenerationParams::greedy(8);
        let a = generate_labels(&llm, &d, &p).unwrap();
        let b = generate_labels(&llm, &d, &p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|e| e.source == LabelSource::Generated));
    }

    #[test]
    fn loss_trace_csv() {
        let mut buf = Vec::new();
        write_loss_trace(&[LossRecord { step: 0, lr: 0.5, loss: 2.0 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "step,lr,loss\n0,0.5,2.0\n");
    }
}
