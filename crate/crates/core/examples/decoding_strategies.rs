//! Greedy, beam and nucleus decoding from one trained model.
//!
//!     cargo run --release --example decoding_strategies

use l2s::decoding::{generate, GenerationParams};
use l2s::model::{Arch, Checkpoint, ModelConfig, PlainModel, Role};
use l2s::tasks::{generate_task, TaskKind, TaskSpec};
use l2s::tokenizer::Vocab;
use l2s::train::{train, TrainConfig, Trainee};

fn main() -> anyhow::Result<()> {
    let (train_set, test) = generate_task(&TaskSpec {
        kind: TaskKind::ExtractSummarize,
        train_size: 1000,
        test_size: 3,
        ..TaskSpec::default()
    })?;
    let mut t = Trainee::Model(Checkpoint::init(ModelConfig::new(Arch::EncoderDecoder, 32, 2, 2, 67, 64), Role::Slm, 0)?);
    let cfg = TrainConfig {
        total_steps: 500,
        micro_batch: 16,
        accumulation: 1,
        lr_base: 3e-3,
        ..TrainConfig::default()
    };
    train(&mut t, &train_set, &cfg)?;
    let Trainee::Model(ck) = t else { unreachable!() };
    let model = PlainModel::new(&ck)?;
    let vocab = Vocab::for_size(67)?;

    let strategies = [
        ("greedy", GenerationParams::greedy(16)),
        ("beam 4, alpha 0.6", GenerationParams::beam(16, 4, 0.6)),
        ("nucleus p=0.9, T=1", GenerationParams::nucleus(16, 0.9, 1.0, 7)),
        ("nucleus p=1.0, T=2", GenerationParams::nucleus(16, 1.0, 2.0, 7)),
    ];
    for e in &test {
        println!("{} (want {})", e.prompt, e.target);
        let ids = vocab.encode(e.prompt.as_bytes(), false)?;
        for (name, p) in &strategies {
            let out = generate(&model, &ids, p)?;
            println!("  {name:<20} {}", String::from_utf8_lossy(&vocab.decode_until_eos(&out)?));
        }
    }
    Ok(())
}
