//! Speculative decoding: a small draft proposes `gamma` tokens and the
//! target checks them in one pass. Greedy output is identical to the
//! target's own greedy output whatever the draft.
//!
//!     cargo run --release --example speculative_decoding

use l2s::bridge::{FusionMode, HybridBundle, TokenizerMode};
use l2s::decoding::{generate, speculative_generate, speculative_generate_hybrid, GenerationParams, SpecDecParams};
use l2s::model::{Arch, Checkpoint, ModelConfig, PlainModel, Role};
use l2s::tasks::{generate_task, TaskSpec};
use l2s::tokenizer::Vocab;
use l2s::train::{train, TrainConfig, TrainMode, Trainee};

fn main() -> anyhow::Result<()> {
    let (train_set, test) = generate_task(&TaskSpec {
        train_size: 1000,
        test_size: 20,
        ..TaskSpec::default()
    })?;
    let cfg = |mode| TrainConfig {
        mode,
        total_steps: 400,
        micro_batch: 16,
        accumulation: 1,
        lr_base: 3e-3,
        ..TrainConfig::default()
    };
    let mut target = Trainee::Model(Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 64, 2, 4, 67, 64), Role::Llm, 0)?);
    train(&mut target, &train_set, &cfg(TrainMode::SlmBaseline))?;
    let Trainee::Model(target) = target else { unreachable!() };
    let mut draft = Trainee::Model(Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 16, 1, 2, 67, 64), Role::Slm, 1)?);
    train(&mut draft, &train_set, &cfg(TrainMode::SlmBaseline))?;
    let Trainee::Model(draft) = draft else { unreachable!() };

    let vocab = Vocab::for_size(67)?;
    let params = GenerationParams::greedy(12);
    let (t, d) = (PlainModel::new(&target)?, PlainModel::new(&draft)?);
    for gamma in [1, 2, 4, 6] {
        let (mut calls, mut tokens, mut accepted, mut proposed) = (0, 0, 0, 0);
        for e in &test {
            let ids = vocab.encode(e.prompt.as_bytes(), false)?;
            let out = speculative_generate(&t, &d, &ids, &SpecDecParams { gamma }, &params)?;
            assert_eq!(out.tokens, generate(&t, &ids, &params)?);
            calls += out.stats.target_calls;
            tokens += out.tokens.len();
            accepted += out.stats.accepted;
            proposed += out.stats.proposed;
        }
        println!(
            "gamma {gamma}: {tokens} tokens in {calls} target passes, {:.0}% of drafts accepted",
            100.0 * accepted as f64 / proposed.max(1) as f64
        );
    }

    // A hybrid drafts for its own large model; the prompt encoding is shared.
    let bundle = HybridBundle::new(target.clone(), draft, FusionMode::Add, TokenizerMode::LlmShared, Some(1), 2)?;
    let ids = vocab.encode(test[0].prompt.as_bytes(), false)?;
    let out = speculative_generate_hybrid(&bundle, &ids, &SpecDecParams { gamma: 4 }, &params)?;
    println!(
        "hybrid draft: {:?} ({} target passes)",
        String::from_utf8_lossy(&vocab.decode_until_eos(&out.tokens)?),
        out.stats.target_calls
    );
    Ok(())
}
