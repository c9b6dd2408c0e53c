//! Large model, small models at two depths, and the same small models
//! reading the large model's encoding, on the keyed substitution task.
//!
//!     cargo run --release --example quality_trend [seeds] [steps]

use l2s::experiments::{mean_scores, quality_trend, QualitySetup, Scores, TrendRow};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let mut setup = QualitySetup::default();
    if let Some(steps) = args.next() {
        setup.train.total_steps = steps.parse()?;
    }
    let mut rows = Vec::new();
    for seed in 0..seeds {
        let (row, _) = quality_trend(&setup, seed)?;
        println!("seed {seed}: {}", serde_json::to_string(&row)?);
        rows.push(row);
    }
    let show = |name: &str, f: fn(&TrendRow) -> Scores| {
        let s = mean_scores(&rows.iter().map(f).collect::<Vec<_>>());
        println!("{name:<18} EM {:>5.1}  BLEU {:>6.2}", s.exact_match, s.bleu);
    };
    show("large", |r| r.llm);
    show("small, 1 layer", |r| r.slm_shallow);
    show("hybrid, 1 layer", |r| r.hybrid_shallow);
    show("small, full", |r| r.slm_full);
    show("hybrid, full", |r| r.hybrid_full);
    Ok(())
}
