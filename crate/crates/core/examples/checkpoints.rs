//! Checkpoints and bundles on disk, and layer truncation.
//!
//!     cargo run --example checkpoints

use l2s::bridge::{FusionMode, HybridBundle, TokenizerMode};
use l2s::model::{Arch, Checkpoint, ModelConfig, Role};

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("l2s-checkpoints-example");
    let llm = Checkpoint::init(ModelConfig::new(Arch::EncoderDecoder, 64, 2, 4, 67, 64), Role::Llm, 0)?;
    let slm = Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 32, 4, 2, 67, 64), Role::Slm, 1)?;

    let path = dir.join("slm.ckpt");
    std::fs::create_dir_all(&dir)?;
    slm.save(&path)?;
    let back = Checkpoint::load(&path)?;
    println!(
        "{}: {} tensors, {} params, bit-equal after reload: {}",
        path.display(),
        back.tensors().len(),
        back.num_params(),
        back.bit_equal(&slm)
    );

    for depth in [1, 2, 4] {
        let t = slm.truncate_layers(depth)?;
        println!("truncated to {depth} layer(s): {} params", t.num_params());
    }

    let bundle = HybridBundle::new(llm, slm.truncate_layers(1)?, FusionMode::Add, TokenizerMode::LlmShared, None, 2)?;
    let manifest = bundle.save(dir.join("bundle"))?;
    println!("bundle manifest {}", manifest.display());
    println!("{}", std::fs::read_to_string(&manifest)?);
    assert_eq!(HybridBundle::load(&manifest)?, bundle);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
