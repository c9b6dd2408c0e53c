//! Closed-form FLOPs against measured decode speed for a small model, a
//! large model and the hybrid that reads the large model's encoding once.
//!
//!     cargo run --release --example flops_and_timing

use l2s::bench::{measure_interleaved, BenchParams, Target};
use l2s::bridge::{FusionMode, HybridBundle, TokenizerMode};
use l2s::model::{Arch, Checkpoint, ModelConfig, Role};

fn main() -> anyhow::Result<()> {
    let llm = Checkpoint::init(ModelConfig::new(Arch::EncoderDecoder, 128, 2, 4, 259, 400), Role::Llm, 0)?;
    let slm = Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 16, 6, 2, 259, 400), Role::Slm, 0)?;
    let bundle = HybridBundle::new(llm.clone(), slm.clone(), FusionMode::Add, TokenizerMode::LlmShared, None, 0)?;
    let targets = [("slm", Target::Plain(&slm)), ("hybrid", Target::Hybrid(&bundle)), ("llm", Target::Plain(&llm))];

    for (id, t) in &targets {
        println!("{id:<7} {:>8} params", t.param_count()?);
    }
    println!("\nclosed-form FLOPs at m = 100");
    for n in [1, 16, 64, 256] {
        let row: Vec<String> = targets.iter().map(|(id, t)| format!("{id} {:>11}", t.flops(100, n).unwrap())).collect();
        println!("n = {n:<4} {}", row.join("  "));
    }

    println!("\nms per generated token at m = 100");
    for n in [32, 128, 256] {
        let r = measure_interleaved(&targets, &BenchParams { m: 100, n, reps: 7, warmup: 2 })?;
        println!(
            "n = {n:<4} slm {:.4}  hybrid {:.4}  llm {:.4}  hybrid/slm {:.2}",
            r[0].ms_per_token,
            r[1].ms_per_token,
            r[2].ms_per_token,
            r[1].ms_per_token / r[0].ms_per_token
        );
    }
    Ok(())
}
