//! Trains a small decoder-only model on the reversal task and scores it.
//!
//!     cargo run --release --example train_small_model [steps]

use l2s::decoding::GenerationParams;
use l2s::experiments::score;
use l2s::model::{Arch, Checkpoint, ModelConfig, Role};
use l2s::tasks::{generate_task, TaskSpec};
use l2s::train::{train, TrainConfig, Trainee};

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(600);
    let (train_set, test) = generate_task(&TaskSpec {
        train_size: 1000,
        test_size: 100,
        ..TaskSpec::default()
    })?;
    println!("{} -> {}", train_set[0].prompt, train_set[0].target);

    let ck = Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 32, 2, 2, 67, 64), Role::Slm, 0)?;
    let mut model = Trainee::Model(ck);
    let cfg = TrainConfig {
        total_steps: steps,
        micro_batch: 16,
        accumulation: 1,
        lr_base: 3e-3,
        ..TrainConfig::default()
    };
    let trace = train(&mut model, &train_set, &cfg)?;
    for r in trace.iter().step_by((steps / 6).max(1)) {
        println!("step {:>5}  lr {:.2e}  loss {:.4}", r.step, r.lr, r.loss);
    }

    let preds = model.predict(&test, &GenerationParams::greedy(16))?;
    let refs: Vec<String> = test.iter().map(|e| e.target.clone()).collect();
    let s = score(&preds, &refs)?;
    println!("exact match {:.1}  char BLEU {:.2}", s.exact_match, s.bleu);
    for (p, e) in preds.iter().zip(&test).take(3) {
        println!("  {} -> {p} (want {})", e.prompt, e.target);
    }
    Ok(())
}
