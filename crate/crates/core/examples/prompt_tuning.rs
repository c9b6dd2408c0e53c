//! Soft prompt tuning: learnable rows in front of a fixed small model.
//!
//!     cargo run --release --example prompt_tuning

use l2s::bridge::PromptTuned;
use l2s::decoding::GenerationParams;
use l2s::experiments::score;
use l2s::model::{Arch, Checkpoint, ModelConfig, Role};
use l2s::tasks::{generate_task, TaskKind, TaskSpec};
use l2s::train::{train, trainable_params, TrainConfig, TrainMode, Trainee};

fn main() -> anyhow::Result<()> {
    let spec = |kind| TaskSpec {
        kind,
        train_size: 1000,
        test_size: 100,
        ..TaskSpec::default()
    };
    let cfg = |mode| TrainConfig {
        mode,
        total_steps: 600,
        micro_batch: 16,
        accumulation: 1,
        lr_base: 3e-3,
        ..TrainConfig::default()
    };
    // A small model that knows reversal, adapted to substitution through its prompt alone.
    let (reversal, _) = generate_task(&spec(TaskKind::ReversalTranslation))?;
    let mut base = Trainee::Model(Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 32, 2, 2, 67, 160), Role::Slm, 0)?);
    train(&mut base, &reversal, &cfg(TrainMode::SlmBaseline))?;
    let Trainee::Model(base) = base else { unreachable!() };

    let (train_set, test) = generate_task(&spec(TaskKind::KeyedSubstitutionTranslation))?;
    let refs: Vec<String> = test.iter().map(|e| e.target.clone()).collect();
    for len in [4, 16, 64] {
        let mut t = Trainee::PromptTuned(PromptTuned::new(base.clone(), len, 1)?);
        let n = trainable_params(&t, TrainMode::PromptTuningBaseline);
        train(&mut t, &train_set, &cfg(TrainMode::PromptTuningBaseline))?;
        let s = score(&t.predict(&test, &GenerationParams::greedy(16))?, &refs)?;
        println!("soft prompt of {len:>2} rows ({n:>5} params): EM {:.1}, char BLEU {:.2}", s.exact_match, s.bleu);
    }
    Ok(())
}
