//! Saved models behind one path-based interface.
//!
//! A plain checkpoint is a single file. A bundle is a directory holding
//! `bundle.json` and its three checkpoints; a prompt-tuned model is a
//! directory holding `slm.ckpt` and `prompt.ckpt`.

use std::fs;
use std::path::Path;

use crate::bench::Target;
use crate::bridge::{HybridBundle, HybridModel, PromptTuned, PromptTunedModel};
use crate::decoding::GenerationParams;
use crate::error::{Error, Result};
use crate::model::{Checkpoint, PlainModel};
use crate::tasks::Example;
use crate::train::{predict, Trainee};

pub const BUNDLE_MANIFEST: &str = "bundle.json";
const PT_SLM: &str = "slm.ckpt";
const PT_PROMPT: &str = "prompt.ckpt";

impl PromptTuned {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.slm.save(dir.join(PT_SLM))?;
        self.prompt.save(dir.join(PT_PROMPT))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            slm: Checkpoint::load(dir.join(PT_SLM))?,
            prompt: Checkpoint::load(dir.join(PT_PROMPT))?,
        })
    }
}

impl Trainee {
    /// Loads whichever kind of artifact lives at `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            if path.join(BUNDLE_MANIFEST).is_file() {
                return Ok(Trainee::Hybrid(HybridBundle::load(path.join(BUNDLE_MANIFEST))?));
            }
            if path.join(PT_PROMPT).is_file() {
                return Ok(Trainee::PromptTuned(PromptTuned::load(path)?));
            }
            return Err(Error::Format(format!("{} holds no bundle or prompt-tuned model", path.display())));
        }
        Ok(Trainee::Model(Checkpoint::load(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        match self {
            Trainee::Model(ck) => ck.save(path),
            Trainee::Hybrid(b) => b.save(path).map(|_| ()),
            Trainee::PromptTuned(p) => p.save(path),
        }
    }

    /// Output texts for every prompt of `data`.
    pub fn predict(&self, data: &[Example], params: &GenerationParams) -> Result<Vec<String>> {
        let (input, output) = (self.input_vocab()?, self.output_vocab()?);
        match self {
            Trainee::Model(ck) => predict(&PlainModel::new(ck)?, &input, &output, data, params),
            Trainee::Hybrid(b) => predict(&HybridModel::new(b)?, &input, &output, data, params),
            Trainee::PromptTuned(p) => predict(&PromptTunedModel::new(p)?, &input, &output, data, params),
        }
    }

    pub fn bench_target(&self) -> Result<Target<'_>> {
        match self {
            Trainee::Model(ck) => Ok(Target::Plain(ck)),
            Trainee::Hybrid(b) => Ok(Target::Hybrid(b)),
            Trainee::PromptTuned(_) => Err(Error::contract("prompt-tuned models are not benchmarked")),
        }
    }
}
