//! Sequence-level distillation: the large model labels the prompts and a
//! small model trains on those labels instead of the references.
//!
//!     cargo run --release --example distillation

use l2s::decoding::GenerationParams;
use l2s::experiments::score;
use l2s::model::{Arch, Checkpoint, ModelConfig, Role};
use l2s::tasks::{generate_task, TaskSpec};
use l2s::train::{generate_labels, train, LabelChoice, TrainConfig, Trainee};

fn main() -> anyhow::Result<()> {
    let (train_set, test) = generate_task(&TaskSpec {
        train_size: 1000,
        test_size: 100,
        ..TaskSpec::default()
    })?;
    let cfg = TrainConfig {
        total_steps: 500,
        micro_batch: 16,
        accumulation: 1,
        lr_base: 3e-3,
        ..TrainConfig::default()
    };
    let mut teacher = Trainee::Model(Checkpoint::init(ModelConfig::new(Arch::EncoderDecoder, 64, 2, 4, 67, 64), Role::Llm, 0)?);
    train(&mut teacher, &train_set, &cfg)?;
    let Trainee::Model(teacher) = teacher else { unreachable!() };

    let labels = generate_labels(&teacher, &train_set, &GenerationParams::greedy(16))?;
    let agree = labels.iter().zip(&train_set).filter(|(a, b)| a.target == b.target).count();
    println!("teacher labels match the references on {agree}/{} prompts", labels.len());

    let mut student = Trainee::Model(Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 16, 1, 2, 67, 64), Role::Slm, 1)?);
    train(
        &mut student,
        &labels,
        &TrainConfig {
            label_source: LabelChoice::LlmGenerated,
            ..cfg
        },
    )?;
    let refs: Vec<String> = test.iter().map(|e| e.target.clone()).collect();
    let s = score(&student.predict(&test, &GenerationParams::greedy(16))?, &refs)?;
    println!("distilled student: EM {:.1}, char BLEU {:.2}", s.exact_match, s.bleu);
    Ok(())
}
