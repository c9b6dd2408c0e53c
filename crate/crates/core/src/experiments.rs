//! End-to-end experiment drivers on the synthetic tasks: reference training,
//! hybrid vs. small-model comparisons and the ablation grids.
//!
//! Every driver trains from scratch with the budget in [`QualitySetup::train`]
//! and scores the test split with [`QualitySetup::generation`].

use serde::{Deserialize, Serialize};

use crate::bridge::{FusionMode, HybridBundle, PromptTuned, TokenizerMode};
use crate::decoding::GenerationParams;
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, exact_match, Tokenization};
use crate::model::{Arch, Checkpoint, ModelConfig, Role};
use crate::tasks::{generate_task, Example, TaskKind, TaskSpec};
use crate::train::{train, trainable_params, TrainConfig, TrainMode, Trainee};

/// Test-split quality, both on a 0–100 scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub exact_match: f64,
    /// Character-level corpus BLEU; targets are unspaced symbol strings.
    pub bleu: f64,
}

pub fn score(preds: &[String], refs: &[String]) -> Result<Scores> {
    Ok(Scores {
        exact_match: 100.0 * exact_match(preds, refs)?,
        bleu: corpus_bleu(preds, refs, 4, Tokenization::Chars)?,
    })
}

/// Mean of each field.
pub fn mean_scores(rows: &[Scores]) -> Scores {
    let n = rows.len().max(1) as f64;
    Scores {
        exact_match: rows.iter().map(|s| s.exact_match).sum::<f64>() / n,
        bleu: rows.iter().map(|s| s.bleu).sum::<f64>() / n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualitySetup {
    /// Task template; its seed is replaced per run.
    pub task: TaskSpec,
    pub llm: ModelConfig,
    /// Full-depth small model.
    pub slm: ModelConfig,
    /// Depth of the truncated small model.
    pub shallow_depth: usize,
    /// Shared by every model; its seed is replaced per run.
    pub train: TrainConfig,
    /// Learning rate of both parameter-efficient arms, whose backbone is
    /// frozen; everything else follows `train`.
    pub peft_lr: f64,
    pub generation: GenerationParams,
}

impl Default for QualitySetup {
    fn default() -> Self {
        Self {
            task: TaskSpec {
                kind: TaskKind::KeyedSubstitutionTranslation,
                train_size: 2000,
                test_size: 200,
                ..TaskSpec::default()
            },
            llm: ModelConfig::new(Arch::EncoderDecoder, 64, 2, 4, 67, 64),
            slm: ModelConfig::new(Arch::DecoderOnly, 32, 2, 2, 67, 160),
            shallow_depth: 1,
            train: TrainConfig {
                lr_base: 1e-3,
                total_steps: 3000,
                micro_batch: 16,
                accumulation: 1,
                ..TrainConfig::default()
            },
            peft_lr: 1e-2,
            generation: GenerationParams::beam(16, 4, 0.6),
        }
    }
}

impl QualitySetup {
    pub fn data(&self, seed: u64) -> Result<(Vec<Example>, Vec<Example>)> {
        generate_task(&TaskSpec { seed, ..self.task.clone() })
    }

    fn config(&self, seed: u64, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            seed,
            mode,
            ..self.train.clone()
        }
    }

    fn evaluate(&self, t: &Trainee, test: &[Example]) -> Result<Scores> {
        let refs: Vec<String> = test.iter().map(|e| e.target.clone()).collect();
        score(&t.predict(test, &self.generation)?, &refs)
    }

    /// Trains and scores one model.
    pub fn fit(&self, mut t: Trainee, mode: TrainMode, seed: u64, train_set: &[Example], test: &[Example]) -> Result<(Trainee, Scores)> {
        train(&mut t, train_set, &self.config(seed, mode))?;
        let s = self.evaluate(&t, test)?;
        Ok((t, s))
    }

    /// The large model trained on the task; the reference every hybrid reads.
    pub fn reference_llm(&self, seed: u64, train_set: &[Example], test: &[Example]) -> Result<(Checkpoint, Scores)> {
        let ck = Checkpoint::init(self.llm.clone(), Role::Llm, seed)?;
        let (t, s) = self.fit(Trainee::Model(ck), TrainMode::SlmBaseline, seed, train_set, test)?;
        let Trainee::Model(mut ck) = t else {
            unreachable!("plain models train as plain models")
        };
        ck.role = Role::Llm;
        Ok((ck, s))
    }

    fn hybrid(&self, llm: &Checkpoint, slm: Checkpoint, fusion: FusionMode, layer: Option<usize>, seed: u64) -> Result<Trainee> {
        Ok(Trainee::Hybrid(HybridBundle::new(
            llm.clone(),
            slm,
            fusion,
            TokenizerMode::LlmShared,
            layer,
            seed,
        )?))
    }
}

/// One seed of the quality comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub seed: u64,
    pub llm: Scores,
    pub slm_shallow: Scores,
    pub hybrid_shallow: Scores,
    pub slm_full: Scores,
    pub hybrid_full: Scores,
}

/// Trains the reference large model, then shallow and full-depth small
/// models with and without it, all from the same initialization.
/// Returns the trained large model too so that ablations can reuse it.
pub fn quality_trend(setup: &QualitySetup, seed: u64) -> Result<(TrendRow, Checkpoint)> {
    let (train_set, test) = setup.data(seed)?;
    let (llm, llm_s) = setup.reference_llm(seed, &train_set, &test)?;
    let full = Checkpoint::init(setup.slm.clone(), Role::Slm, seed)?;
    let shallow = full.truncate_layers(setup.shallow_depth)?;
    let run = |slm: &Checkpoint, hybrid: bool| -> Result<Scores> {
        let (t, mode) = if hybrid {
            (setup.hybrid(&llm, slm.clone(), FusionMode::Add, None, seed)?, TrainMode::Llm2slmFull)
        } else {
            (Trainee::Model(slm.clone()), TrainMode::SlmBaseline)
        };
        Ok(setup.fit(t, mode, seed, &train_set, &test)?.1)
    };
    let row = TrendRow {
        seed,
        llm: llm_s,
        slm_shallow: run(&shallow, false)?,
        hybrid_shallow: run(&shallow, true)?,
        slm_full: run(&full, false)?,
        hybrid_full: run(&full, true)?,
    };
    Ok((row, llm))
}

/// One cell of an ablation grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config_id: String,
    pub trainable_params: usize,
    pub exact_match: f64,
    pub bleu: f64,
}

impl AblationRow {
    fn new(config_id: impl Into<String>, trainable_params: usize, s: Scores) -> Self {
        Self {
            config_id: config_id.into(),
            trainable_params,
            exact_match: s.exact_match,
            bleu: s.bleu,
        }
    }
}

/// A full-depth small model trained on plain reversal, standing in for a
/// pretrained model that has never seen the keyed task.
pub fn pretrained_slm(setup: &QualitySetup, seed: u64) -> Result<Checkpoint> {
    let spec = TaskSpec {
        kind: TaskKind::ReversalTranslation,
        seed,
        ..setup.task.clone()
    };
    let (train_set, _) = generate_task(&spec)?;
    let mut t = Trainee::Model(Checkpoint::init(setup.slm.clone(), Role::Slm, seed)?);
    train(&mut t, &train_set, &setup.config(seed, TrainMode::SlmBaseline))?;
    match t {
        Trainee::Model(ck) => Ok(ck),
        _ => unreachable!("plain models train as plain models"),
    }
}

/// Soft-prompt rows whose parameter count is closest to the projector's.
pub fn matched_prompt_len(projector_params: usize, d_slm: usize) -> usize {
    ((projector_params as f64 / d_slm as f64).round() as usize).max(1)
}

/// Projector-only training against a prompt-tuned baseline, both on top of
/// the same frozen small model and with matched trainable-parameter counts.
pub fn peft_comparison(setup: &QualitySetup, seed: u64, llm: &Checkpoint, frozen_slm: &Checkpoint) -> Result<Vec<AblationRow>> {
    let setup = &QualitySetup {
        train: TrainConfig {
            lr_base: setup.peft_lr,
            ..setup.train.clone()
        },
        ..setup.clone()
    };
    let (train_set, test) = setup.data(seed)?;
    let proj = setup.hybrid(llm, frozen_slm.clone(), FusionMode::Add, None, seed)?;
    let proj_params = trainable_params(&proj, TrainMode::ProjectorOnly);
    let len = matched_prompt_len(proj_params, frozen_slm.model_config()?.d_model);
    let tuned = Trainee::PromptTuned(PromptTuned::new(frozen_slm.clone(), len, seed)?);
    let tuned_params = trainable_params(&tuned, TrainMode::PromptTuningBaseline);
    let (_, ps) = setup.fit(proj, TrainMode::ProjectorOnly, seed, &train_set, &test)?;
    let (_, ts) = setup.fit(tuned, TrainMode::PromptTuningBaseline, seed, &train_set, &test)?;
    Ok(vec![
        AblationRow::new("projector_only", proj_params, ps),
        AblationRow::new(format!("prompt_tuning_len{len}"), tuned_params, ts),
    ])
}

/// Add against Replace fusion with the full-depth small model.
pub fn fusion_comparison(setup: &QualitySetup, seed: u64, llm: &Checkpoint) -> Result<Vec<AblationRow>> {
    let (train_set, test) = setup.data(seed)?;
    let slm = Checkpoint::init(setup.slm.clone(), Role::Slm, seed)?;
    [(FusionMode::Add, "fusion_add"), (FusionMode::Replace, "fusion_replace")]
        .into_iter()
        .map(|(mode, id)| {
            let t = setup.hybrid(llm, slm.clone(), mode, None, seed)?;
            let n = trainable_params(&t, TrainMode::Llm2slmFull);
            let (_, s) = setup.fit(t, TrainMode::Llm2slmFull, seed, &train_set, &test)?;
            Ok(AblationRow::new(id, n, s))
        })
        .collect()
}

/// Trains a decoder-only large model, then one hybrid per extraction layer
/// around the shallow small model.
pub fn extraction_sweep(setup: &QualitySetup, seed: u64, llm_config: &ModelConfig, layers: &[usize]) -> Result<Vec<AblationRow>> {
    if llm_config.arch != Arch::DecoderOnly {
        return Err(Error::contract("extraction layers apply to decoder-only large models"));
    }
    let (train_set, test) = setup.data(seed)?;
    let llm_setup = QualitySetup {
        llm: llm_config.clone(),
        ..setup.clone()
    };
    let (llm, _) = llm_setup.reference_llm(seed, &train_set, &test)?;
    let slm = Checkpoint::init(setup.slm.clone(), Role::Slm, seed)?.truncate_layers(setup.shallow_depth)?;
    layers
        .iter()
        .map(|&l| {
            let t = setup.hybrid(&llm, slm.clone(), FusionMode::Add, Some(l), seed)?;
            let n = trainable_params(&t, TrainMode::Llm2slmFull);
            let (_, s) = setup.fit(t, TrainMode::Llm2slmFull, seed, &train_set, &test)?;
            Ok(AblationRow::new(format!("extract_layer{l}"), n, s))
        })
        .collect()
}

/// Keeps the lowest `d` blocks of `slm` for each depth, fine-tunes each
/// truncation on the task and scores it.
pub fn truncation_sweep(setup: &QualitySetup, seed: u64, slm: &Checkpoint, depths: &[usize]) -> Result<Vec<AblationRow>> {
    let (train_set, test) = setup.data(seed)?;
    depths
        .iter()
        .map(|&d| {
            let t = Trainee::Model(slm.truncate_layers(d)?);
            let n = trainable_params(&t, TrainMode::SlmBaseline);
            let (_, s) = setup.fit(t, TrainMode::SlmBaseline, seed, &train_set, &test)?;
            Ok(AblationRow::new(format!("truncate{d}"), n, s))
        })
        .collect()
}
