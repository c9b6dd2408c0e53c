//! The ablation grids at a reduced budget: fusion mode, extraction layer of
//! a decoder-only large model, small-model depth, and projector-only
//! training against prompt tuning with matched parameter counts.
//!
//!     cargo run --release --example ablations [steps]

use l2s::experiments::{self, AblationRow, QualitySetup};
use l2s::model::{Arch, Checkpoint, ModelConfig, Role};

fn show(rows: &[AblationRow]) {
    for r in rows {
        println!(
            "  {:<22} {:>6} trainable  EM {:>5.1}  BLEU {:>6.2}",
            r.config_id, r.trainable_params, r.exact_match, r.bleu
        );
    }
}

fn main() -> anyhow::Result<()> {
    let mut setup = QualitySetup::default();
    setup.train.total_steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(800);
    setup.task.test_size = 100;
    let seed = 0;
    let (train_set, test) = setup.data(seed)?;
    let (llm, _) = setup.reference_llm(seed, &train_set, &test)?;

    println!("fusion");
    show(&experiments::fusion_comparison(&setup, seed, &llm)?);

    println!("extraction layer");
    let dec = ModelConfig {
        arch: Arch::DecoderOnly,
        n_layers: 4,
        ..setup.llm.clone()
    };
    show(&experiments::extraction_sweep(&setup, seed, &dec, &[0, 1, 2, 4])?);

    println!("small-model depth");
    let slm = Checkpoint::init(
        ModelConfig {
            n_layers: 4,
            ..setup.slm.clone()
        },
        Role::Slm,
        seed,
    )?;
    show(&experiments::truncation_sweep(&setup, seed, &slm, &[1, 2, 4])?);

    println!("parameter-efficient training");
    let frozen = experiments::pretrained_slm(&setup, seed)?;
    show(&experiments::peft_comparison(&setup, seed, &llm, &frozen)?);
    Ok(())
}
