//! Synthetic seq2seq tasks with exact ground truth.
//!
//! * reversal: `"translate: abc"` → `"cba"`
//! * keyed substitution: the reversed body mapped through a fixed secret
//!   bijection of the alphabet, so the output cannot be copied from the input
//! * extraction: payload symbols interleaved with noise spans; the target is
//!   the payload alone

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const REVERSAL_PREFIX: &str = "translate: ";
pub const KEYED_PREFIX: &str = "translate key: ";
pub const EXTRACT_PREFIX: &str = "summarize: ";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ReversalTranslation,
    KeyedSubstitutionTranslation,
    ExtractSummarize,
}

impl TaskKind {
    pub fn prefix(&self) -> &'static str {
        match self {
            TaskKind::ReversalTranslation => REVERSAL_PREFIX,
            TaskKind::KeyedSubstitutionTranslation => KEYED_PREFIX,
            TaskKind::ExtractSummarize => EXTRACT_PREFIX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Symbols of prompt bodies and targets.
    pub alphabet: String,
    /// Noise symbols for extraction; must not overlap `alphabet`.
    pub noise_alphabet: String,
    pub min_len: usize,
    pub max_len: usize,
    /// Noise symbols per payload symbol for extraction.
    pub noise_ratio: usize,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::ReversalTranslation,
            alphabet: "abcdefghijklmnop".into(),
            noise_alphabet: "0123456789".into(),
            min_len: 3,
            max_len: 8,
            noise_ratio: 2,
            seed: 0,
            train_size: 1000,
            test_size: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    #[default]
    #[serde(rename = "gt")]
    GroundTruth,
    #[serde(rename = "gen")]
    Generated,
}

/// One JSONL record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub prompt: String,
    pub target: String,
    pub source: LabelSource,
}

impl Example {
    /// Prompt with its task prefix removed.
    pub fn body(&self) -> &str {
        [REVERSAL_PREFIX, KEYED_PREFIX, EXTRACT_PREFIX]
            .iter()
            .find_map(|p| self.prompt.strip_prefix(p))
            .unwrap_or(&self.prompt)
    }
}

impl TaskSpec {
    fn symbols(&self) -> Result<Vec<char>> {
        let a: Vec<char> = self.alphabet.chars().collect();
        if a.is_empty() {
            return Err(Error::Generation("empty alphabet".into()));
        }
        let distinct: HashSet<char> = a.iter().copied().collect();
        if distinct.len() != a.len() {
            return Err(Error::Generation("alphabet repeats a symbol".into()));
        }
        Ok(a)
    }

    /// Distinct prompt bodies available at the configured lengths,
    /// saturating at `u128::MAX`.
    pub fn capacity(&self) -> u128 {
        let k = self.alphabet.chars().count() as u128;
        (self.min_len..=self.max_len)
            .map(|l| k.checked_pow(l as u32).unwrap_or(u128::MAX))
            .fold(0u128, u128::saturating_add)
    }

    fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Generation(format!("invalid length range {}..={}", self.min_len, self.max_len)));
        }
        let wanted = (self.train_size + self.test_size) as u128;
        if wanted > self.capacity() {
            return Err(Error::Generation(format!(
                "{wanted} distinct prompts requested but only {} exist",
                self.capacity()
            )));
        }
        if self.kind == TaskKind::ExtractSummarize {
            let noise: HashSet<char> = self.noise_alphabet.chars().collect();
            if self.noise_ratio > 0 && noise.is_empty() {
                return Err(Error::Generation("extraction needs noise symbols".into()));
            }
            if self.alphabet.chars().any(|c| noise.contains(&c)) {
                return Err(Error::Generation("noise and payload alphabets overlap".into()));
            }
        }
        Ok(())
    }

    /// The secret substitution used by the keyed task: `key[i]` replaces
    /// `alphabet[i]`. Depends only on the alphabet and seed.
    pub fn substitution_key(&self) -> Result<Vec<char>> {
        let mut key = self.symbols()?;
        let mut r = rng::derive(self.seed, "substitution-key");
        key.shuffle(&mut r);
        Ok(key)
    }

    /// Ground-truth target of a prompt body.
    pub fn target_of(&self, body: &str) -> Result<String> {
        match self.kind {
            TaskKind::ReversalTranslation => Ok(body.chars().rev().collect()),
            TaskKind::KeyedSubstitutionTranslation => {
                let (a, key) = (self.symbols()?, self.substitution_key()?);
                body.chars()
                    .rev()
                    .map(|c| {
                        a.iter()
                            .position(|x| *x == c)
                            .map(|i| key[i])
                            .ok_or_else(|| Error::Generation(format!("symbol {c:?} outside the alphabet")))
                    })
                    .collect()
            }
            TaskKind::ExtractSummarize => Ok(body.chars().filter(|c| self.alphabet.contains(*c)).collect()),
        }
    }
}

fn random_body<R: Rng>(spec: &TaskSpec, symbols: &[char], r: &mut R) -> (String, String) {
    let len = r.gen_range(spec.min_len..=spec.max_len);
    let payload: String = (0..len).map(|_| symbols[r.gen_range(0..symbols.len())]).collect();
    if spec.kind != TaskKind::ExtractSummarize || spec.noise_ratio == 0 {
        return (payload.clone(), payload);
    }
    let noise: Vec<char> = spec.noise_alphabet.chars().collect();
    // Spread `ratio * len` noise symbols over the `len + 1` gaps.
    let mut gaps = vec![0usize; len + 1];
    for _ in 0..spec.noise_ratio * len {
        gaps[r.gen_range(0..=len)] += 1;
    }
    let mut body = String::new();
    let mut chars = payload.chars();
    for (i, g) in gaps.iter().enumerate() {
        for _ in 0..*g {
            body.push(noise[r.gen_range(0..noise.len())]);
        }
        if i < len {
            body.push(chars.next().expect("payload symbol"));
        }
    }
    (body, payload)
}

/// Train and test splits, disjoint by prompt; byte-identical per seed.
pub fn generate_task(spec: &TaskSpec) -> Result<(Vec<Example>, Vec<Example>)> {
    spec.validate()?;
    let symbols = spec.symbols()?;
    let mut r = rng::derive(spec.seed, "task");
    let total = spec.train_size + spec.test_size;
    let mut seen = HashSet::with_capacity(total);
    let mut out = Vec::with_capacity(total);
    let mut attempts = 0u64;
    while out.len() < total {
        attempts += 1;
        if attempts > 1000 * total as u64 + 10_000 {
            return Err(Error::Generation("could not draw enough distinct prompts".into()));
        }
        let (body, payload) = random_body(spec, &symbols, &mut r);
        if !seen.insert(body.clone()) {
            continue;
        }
        let target = match spec.kind {
            TaskKind::ExtractSummarize => payload,
            _ => spec.target_of(&body)?,
        };
        out.push(Example {
            prompt: format!("{}{body}", spec.kind.prefix()),
            target,
            source: LabelSource::GroundTruth,
        });
    }
    let test = out.split_off(spec.train_size);
    Ok((out, test))
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Writes `train.jsonl` and `test.jsonl` into `dir`.
pub fn write_task(spec: &TaskSpec, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (train, test) = generate_task(spec)?;
    write_jsonl(dir.join("train.jsonl"), &train)?;
    write_jsonl(dir.join("test.jsonl"), &test)
}
