//! Trains a large encoder-decoder as the reference, then a 1-layer small
//! model with and without its prompt encoding, on the keyed substitution
//! task. The large model stays frozen throughout.
//!
//!     cargo run --release --example hybrid_training [steps]

use l2s::bridge::{FusionMode, HybridBundle, TokenizerMode};
use l2s::experiments::QualitySetup;
use l2s::model::{Checkpoint, Role};
use l2s::train::{trainable_params, TrainMode, Trainee};

fn main() -> anyhow::Result<()> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1500);
    let mut setup = QualitySetup::default();
    setup.train.total_steps = steps;
    setup.task.test_size = 100;
    let seed = 0;
    let (train_set, test) = setup.data(seed)?;

    let (llm, llm_scores) = setup.reference_llm(seed, &train_set, &test)?;
    println!("large model: {} params, EM {:.1}", llm.num_params(), llm_scores.exact_match);

    let slm = Checkpoint::init(setup.slm.clone(), Role::Slm, seed)?.truncate_layers(1)?;
    let (_, alone) = setup.fit(Trainee::Model(slm.clone()), TrainMode::SlmBaseline, seed, &train_set, &test)?;
    println!("small model alone: {} params, EM {:.1}", slm.num_params(), alone.exact_match);

    let bundle = Trainee::Hybrid(HybridBundle::new(llm.clone(), slm, FusionMode::Add, TokenizerMode::LlmShared, None, seed)?);
    let n = trainable_params(&bundle, TrainMode::Llm2slmFull);
    let (trained, hybrid) = setup.fit(bundle, TrainMode::Llm2slmFull, seed, &train_set, &test)?;
    println!("with the large model's encoding: {n} trainable params, EM {:.1}", hybrid.exact_match);

    let Trainee::Hybrid(b) = trained else { unreachable!() };
    println!("large model unchanged: {}", b.llm.bit_equal(&llm));
    Ok(())
}
