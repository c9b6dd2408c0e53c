//! Wall-clock and FLOPs measurement of fixed-length greedy generation.
//!
//! Every run decodes exactly `n` tokens (EOS suppressed) after a synthetic
//! `m`-token prompt. Timings are medians over repetitions that follow
//! untimed warmup runs. Kernels run on the calling thread only.

use std::io::Write;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bridge::{HybridBundle, HybridModel};
use crate::decoding::{generate_counted, GenerationParams, StepModel};
use crate::error::{Error, Result};
use crate::model::infer::Flops;
use crate::model::{Checkpoint, PlainModel};
use crate::tokenizer::N_SPECIAL;

/// Coefficient of variation above which a record is flagged.
pub const CV_WARNING: f64 = 0.20;

/// One CSV row. Column order is part of the file format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub config_id: String,
    pub m: usize,
    pub n: usize,
    pub ms_per_token: f64,
    pub total_ms: f64,
    /// Instrumented linear-layer FLOPs of one generation.
    pub flops_total: u64,
    pub flops_per_token: f64,
    pub reps: usize,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Set when repetitions disagree by more than [`CV_WARNING`].
    pub warning: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchParams {
    pub m: usize,
    pub n: usize,
    pub reps: usize,
    pub warmup: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        Self {
            m: 100,
            n: 100,
            reps: 5,
            warmup: 2,
        }
    }
}

impl BenchParams {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 5 || self.warmup < 2 {
            return Err(Error::contract("benchmarks need at least 5 repetitions after 2 warmup runs"));
        }
        if self.m == 0 || self.n == 0 {
            return Err(Error::contract("prompt and generation lengths must be positive"));
        }
        Ok(())
    }
}

/// A fixed prompt of `m` ordinary tokens.
pub fn synthetic_prompt(m: usize, vocab_size: usize) -> Vec<u32> {
    let span = vocab_size as u32 - N_SPECIAL;
    (0..m as u32).map(|i| N_SPECIAL + (i * 7 + 11) % span).collect()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if mean == 0.0 {
        0.0
    } else {
        var.sqrt() / mean
    }
}

fn timing_params(n: usize) -> GenerationParams {
    GenerationParams {
        suppress_eos: true,
        ..GenerationParams::greedy(n)
    }
}

fn record(config_id: &str, p: &BenchParams, times: &[f64], flops: &Flops) -> BenchRecord {
    let total_ms = median(times);
    BenchRecord {
        config_id: config_id.to_string(),
        m: p.m,
        n: p.n,
        ms_per_token: total_ms / p.n as f64,
        total_ms,
        flops_total: flops.linear,
        flops_per_token: flops.linear as f64 / p.n as f64,
        reps: times.len(),
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        warning: coefficient_of_variation(times) > CV_WARNING,
    }
}

fn timed<M: StepModel>(model: &M, prompt: &[u32], params: &GenerationParams) -> Result<f64> {
    let mut f = Flops::default();
    let t0 = Instant::now();
    let out = generate_counted(model, prompt, params, &mut f)?;
    let ms = t0.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(out);
    Ok(ms)
}

fn warm_up<M: StepModel>(model: &M, prompt: &[u32], p: &BenchParams) -> Result<Flops> {
    let params = timing_params(p.n);
    let mut flops = Flops::default();
    for _ in 0..p.warmup {
        flops = Flops::default();
        let out = generate_counted(model, prompt, &params, &mut flops)?;
        debug_assert_eq!(out.len(), p.n);
    }
    Ok(flops)
}

/// Times one model; see the module docs for the protocol.
pub fn measure<M: StepModel>(model: &M, config_id: &str, p: &BenchParams) -> Result<BenchRecord> {
    p.validate()?;
    let prompt = synthetic_prompt(p.m, model.vocab_size());
    let flops = warm_up(model, &prompt, p)?;
    let params = timing_params(p.n);
    let times = (0..p.reps).map(|_| timed(model, &prompt, &params)).collect::<Result<Vec<_>>>()?;
    Ok(record(config_id, p, &times, &flops))
}

enum Loaded<'a> {
    Plain(PlainModel<'a>),
    Hybrid(HybridModel<'a>),
}

impl Loaded<'_> {
    fn vocab_size(&self) -> usize {
        match self {
            Loaded::Plain(m) => m.vocab_size(),
            Loaded::Hybrid(m) => m.vocab_size(),
        }
    }

    fn warm_up(&self, prompt: &[u32], p: &BenchParams) -> Result<Flops> {
        match self {
            Loaded::Plain(m) => warm_up(m, prompt, p),
            Loaded::Hybrid(m) => warm_up(m, prompt, p),
        }
    }

    fn timed(&self, prompt: &[u32], params: &GenerationParams) -> Result<f64> {
        match self {
            Loaded::Plain(m) => timed(m, prompt, params),
            Loaded::Hybrid(m) => timed(m, prompt, params),
        }
    }
}

/// Like [`measure`] for several targets at once, with repetitions
/// round-robin across targets so that slow drift in machine speed hits
/// every target alike. Records come back in input order.
pub fn measure_interleaved(targets: &[(&str, Target<'_>)], p: &BenchParams) -> Result<Vec<BenchRecord>> {
    p.validate()?;
    let loaded = targets.iter().map(|(_, t)| t.load()).collect::<Result<Vec<_>>>()?;
    let prompts: Vec<Vec<u32>> = loaded.iter().map(|m| synthetic_prompt(p.m, m.vocab_size())).collect();
    let flops = loaded.iter().zip(&prompts).map(|(m, pr)| m.warm_up(pr, p)).collect::<Result<Vec<_>>>()?;
    let params = timing_params(p.n);
    let mut times = vec![Vec::with_capacity(p.reps); targets.len()];
    for _ in 0..p.reps {
        for ((m, pr), ts) in loaded.iter().zip(&prompts).zip(&mut times) {
            ts.push(m.timed(pr, &params)?);
        }
    }
    Ok(targets.iter().zip(&times).zip(&flops).map(|(((id, _), ts), f)| record(id, p, ts, f)).collect())
}

/// Anything the harness can time.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Plain(&'a Checkpoint),
    Hybrid(&'a HybridBundle),
}

impl<'a> Target<'a> {
    fn load(&self) -> Result<Loaded<'a>> {
        Ok(match *self {
            Target::Plain(ck) => Loaded::Plain(PlainModel::new(ck)?),
            Target::Hybrid(b) => Loaded::Hybrid(HybridModel::new(b)?),
        })
    }

    pub fn measure(&self, config_id: &str, p: &BenchParams) -> Result<BenchRecord> {
        match self.load()? {
            Loaded::Plain(m) => measure(&m, config_id, p),
            Loaded::Hybrid(m) => measure(&m, config_id, p),
        }
    }

    /// Closed-form linear FLOPs with KV caching.
    pub fn flops(&self, m: u64, n: u64) -> Result<u64> {
        match self {
            Target::Plain(ck) => Ok(ck.model_config()?.flops(m, n, true)),
            Target::Hybrid(b) => Ok(b.flops(m, n)),
        }
    }

    /// Non-embedding parameters that run per generation.
    pub fn param_count(&self) -> Result<u64> {
        match self {
            Target::Plain(ck) => Ok(ck.model_config()?.param_count(false)),
            Target::Hybrid(b) => Ok(b.llm_config().param_count(false) + b.slm_config().param_count(false) + b.bridge_config().param_count()),
        }
    }
}

/// One record per `(target, n)` at fixed `m`, targets in the outer loop.
pub fn sweep(targets: &[(&str, Target<'_>)], ns: &[usize], base: &BenchParams) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::with_capacity(targets.len() * ns.len());
    for (id, t) in targets {
        for &n in ns {
            out.push(t.measure(id, &BenchParams { n, ..*base })?);
        }
    }
    Ok(out)
}

/// Pairs `(a, b)` of records at equal `(m, n)` where `a` costs more FLOPs
/// per token but ran faster; such inversions are reported, not failed.
pub fn wall_clock_inversions(records: &[BenchRecord]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for a in records {
        for b in records {
            if (a.m, a.n) == (b.m, b.n) && a.flops_per_token > b.flops_per_token && a.ms_per_token < b.ms_per_token {
                out.push((a.config_id.clone(), b.config_id.clone()));
            }
        }
    }
    out
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn write_records<W: Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
