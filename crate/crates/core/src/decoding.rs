//! Greedy, nucleus and beam decoding, and speculative decoding with a large
//! target model verifying a cheap draft.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{HybridBundle, HybridModel};
use crate::error::{Error, Result};
use crate::model::infer::Flops;
use crate::model::runner::Runner;
use crate::model::{Arch, RunState};
use crate::rng::{self, SplitMix64};
use crate::tensor::{argmax, log_softmax_f64};
use crate::tokenizer::{BOS, EOS};

/// A model that can be driven one decoder step at a time.
///
/// `start` consumes the prompt. `feed` appends decoder inputs (the first
/// one is always `BOS`) and returns next-token logits.
pub trait StepModel {
    type State: Clone;

    fn vocab_size(&self) -> usize;

    /// Longest output the model can produce after a prompt of this length.
    fn max_new_tokens(&self, prompt_len: usize) -> usize;

    fn eos_id(&self) -> Option<u32> {
        Some(EOS)
    }

    fn start(&self, prompt: &[u32], flops: &mut Flops) -> Result<Self::State>;

    fn feed(&self, state: &mut Self::State, tokens: &[u32], all_rows: bool, flops: &mut Flops) -> Result<Vec<Vec<f32>>>;

    /// Number of decoder inputs consumed so far.
    fn fed_len(&self, state: &Self::State) -> usize;

    /// Forgets decoder inputs beyond the first `fed_len`.
    fn rollback(&self, state: &mut Self::State, fed_len: usize);
}

impl<M: StepModel + ?Sized> StepModel for &M {
    type State = M::State;

    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }

    fn max_new_tokens(&self, prompt_len: usize) -> usize {
        (**self).max_new_tokens(prompt_len)
    }

    fn eos_id(&self) -> Option<u32> {
        (**self).eos_id()
    }

    fn start(&self, prompt: &[u32], flops: &mut Flops) -> Result<Self::State> {
        (**self).start(prompt, flops)
    }

    fn feed(&self, state: &mut Self::State, tokens: &[u32], all_rows: bool, flops: &mut Flops) -> Result<Vec<Vec<f32>>> {
        (**self).feed(state, tokens, all_rows, flops)
    }

    fn fed_len(&self, state: &Self::State) -> usize {
        (**self).fed_len(state)
    }

    fn rollback(&self, state: &mut Self::State, fed_len: usize) {
        (**self).rollback(state, fed_len)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Greedy,
    Nucleus,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub strategy: Strategy,
    pub max_new_tokens: usize,
    pub beam_width: usize,
    pub length_penalty: f64,
    pub top_p: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Never emit EOS; used for fixed-length timing runs.
    pub suppress_eos: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            strategy: Strategy::Greedy,
            max_new_tokens: 64,
            beam_width: 4,
            length_penalty: 0.6,
            top_p: 1.0,
            temperature: 1.0,
            seed: 0,
            suppress_eos: false,
        }
    }
}

impl GenerationParams {
    pub fn greedy(n: usize) -> Self {
        Self {
            max_new_tokens: n,
            ..Self::default()
        }
    }

    pub fn beam(n: usize, width: usize, alpha: f64) -> Self {
        Self {
            strategy: Strategy::Beam,
            max_new_tokens: n,
            beam_width: width,
            length_penalty: alpha,
            ..Self::default()
        }
    }

    pub fn nucleus(n: usize, top_p: f64, temperature: f64, seed: u64) -> Self {
        Self {
            strategy: Strategy::Nucleus,
            max_new_tokens: n,
            top_p,
            temperature,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::contract("max_new_tokens must be at least 1"));
        }
        if self.beam_width == 0 {
            return Err(Error::contract("beam width must be at least 1"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::contract(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::contract("temperature must be non-negative"));
        }
        Ok(())
    }
}

/// `log_prob_sum / ((5 + length) / 6)^alpha`.
pub fn beam_score(log_prob_sum: f64, length: usize, alpha: f64) -> f64 {
    log_prob_sum / ((5.0 + length as f64) / 6.0).powf(alpha)
}

fn check_request<M: StepModel>(model: &M, prompt: &[u32], n: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let max = model.max_new_tokens(prompt.len());
    if n > max {
        return Err(Error::Length {
            len: prompt.len() + n,
            max: prompt.len() + max,
        });
    }
    Ok(())
}

fn mask_eos(logits: &mut [f32], eos: Option<u32>, suppress: bool) {
    if let (true, Some(e)) = (suppress, eos) {
        if let Some(v) = logits.get_mut(e as usize) {
            *v = f32::NEG_INFINITY;
        }
    }
}

/// Sampling distribution after temperature and top-p truncation, in f64.
/// Temperature 0 puts all mass on the argmax.
pub fn nucleus_distribution(logits: &[f32], temperature: f64, top_p: f64) -> Vec<f64> {
    let mut p = vec![0.0; logits.len()];
    if temperature == 0.0 {
        p[argmax(logits)] = 1.0;
        return p;
    }
    let max = logits.iter().map(|&v| f64::from(v)).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (pi, &v) in p.iter_mut().zip(logits) {
        *pi = ((f64::from(v) - max) / temperature).exp();
        sum += *pi;
    }
    p.iter_mut().for_each(|v| *v /= sum);
    if top_p < 1.0 {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        let mut keep = vec![false; p.len()];
        let mut acc = 0.0;
        for &i in &order {
            keep[i] = true;
            acc += p[i];
            if acc >= top_p {
                break;
            }
        }
        let mut kept = 0.0;
        for (pi, k) in p.iter_mut().zip(&keep) {
            if *k {
                kept += *pi;
            } else {
                *pi = 0.0;
            }
        }
        p.iter_mut().for_each(|v| *v /= kept);
    }
    p
}

/// Inverse-CDF draw from a normalized distribution.
pub fn sample_from<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            acc += pi;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Generated ids, EOS included when produced.
pub fn generate<M: StepModel>(model: &M, prompt: &[u32], params: &GenerationParams) -> Result<Vec<u32>> {
    generate_counted(model, prompt, params, &mut Flops::default())
}

/// Like [`generate`], accumulating FLOPs of every forward computation.
pub fn generate_counted<M: StepModel>(model: &M, prompt: &[u32], params: &GenerationParams, flops: &mut Flops) -> Result<Vec<u32>> {
    params.validate()?;
    check_request(model, prompt, params.max_new_tokens)?;
    let state = model.start(prompt, flops)?;
    decode_from(model, state, params, flops)
}

/// Continues decoding from a freshly started state.
pub fn decode_from<M: StepModel>(model: &M, state: M::State, params: &GenerationParams, flops: &mut Flops) -> Result<Vec<u32>> {
    match params.strategy {
        Strategy::Greedy => sample_loop(model, state, params, 0.0, flops),
        Strategy::Nucleus => sample_loop(model, state, params, params.temperature, flops),
        Strategy::Beam => beam_search(model, state, params, flops),
    }
}

fn sample_loop<M: StepModel>(model: &M, mut state: M::State, params: &GenerationParams, temperature: f64, flops: &mut Flops) -> Result<Vec<u32>> {
    let eos = model.eos_id();
    let mut rng = rng::derive(params.seed, "nucleus");
    let mut out = Vec::with_capacity(params.max_new_tokens);
    let mut pending = BOS;
    while out.len() < params.max_new_tokens {
        let mut logits = model.feed(&mut state, &[pending], false, flops)?.pop().expect("one row");
        mask_eos(&mut logits, eos, params.suppress_eos);
        let next = if temperature == 0.0 {
            argmax(&logits)
        } else {
            sample_from(&nucleus_distribution(&logits, temperature, params.top_p), &mut rng)
        } as u32;
        out.push(next);
        if Some(next) == eos {
            break;
        }
        pending = next;
    }
    Ok(out)
}

struct Hyp<S> {
    tokens: Vec<u32>,
    log_prob: f64,
    state: S,
}

fn beam_search<M: StepModel>(model: &M, state: M::State, params: &GenerationParams, flops: &mut Flops) -> Result<Vec<u32>> {
    let (width, alpha) = (params.beam_width, params.length_penalty);
    let eos = model.eos_id();
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        log_prob: 0.0,
        state,
    }];
    let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();
    for _ in 0..params.max_new_tokens {
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (b, h) in live.iter_mut().enumerate() {
            let pending = h.tokens.last().copied().unwrap_or(BOS);
            let mut logits = model.feed(&mut h.state, &[pending], false, flops)?.pop().expect("one row");
            mask_eos(&mut logits, eos, params.suppress_eos);
            for (t, lp) in log_softmax_f64(&logits).into_iter().enumerate() {
                if lp.is_finite() {
                    cands.push((h.log_prob + lp, b, t as u32));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        let mut next = Vec::with_capacity(width);
        for (lp, b, t) in cands {
            if next.len() == width {
                break;
            }
            let mut tokens = live[b].tokens.clone();
            tokens.push(t);
            if Some(t) == eos {
                finished.push((beam_score(lp, tokens.len(), alpha), tokens));
                if finished.len() >= width {
                    break;
                }
            } else {
                next.push(Hyp {
                    tokens,
                    log_prob: lp,
                    state: live[b].state.clone(),
                });
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= width {
            break;
        }
    }
    for h in live {
        finished.push((beam_score(h.log_prob, h.tokens.len(), alpha), h.tokens));
    }
    // Stable sort keeps the earliest-found hypothesis among equal scores.
    finished.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(finished.into_iter().next().map(|(_, t)| t).unwrap_or_default())
}

/// Tokens the draft proposes per verification pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecDecParams {
    pub gamma: usize,
}

impl Default for SpecDecParams {
    fn default() -> Self {
        Self { gamma: 4 }
    }
}

/// Verification statistics of one speculative run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpecDecStats {
    /// Verification passes of the target decoder.
    pub target_calls: usize,
    pub draft_calls: usize,
    pub proposed: usize,
    pub accepted: usize,
}

impl SpecDecStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpecDecOutput {
    pub tokens: Vec<u32>,
    pub stats: SpecDecStats,
    pub target_flops: Flops,
    pub draft_flops: Flops,
}

/// Standard rejection step: keep draft token `x` with probability
/// `min(1, p(x)/q(x))`, otherwise draw from `max(0, p - q)` renormalized.
/// Returns whether `x` was kept and the emitted token.
pub fn accept_or_resample<R: Rng + ?Sized>(p: &[f64], q: &[f64], x: usize, rng: &mut R) -> (bool, usize) {
    let u: f64 = rng.gen();
    let ratio = if q[x] > 0.0 { p[x] / q[x] } else { 1.0 };
    if u < ratio.min(1.0) {
        return (true, x);
    }
    let mut residual: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).max(0.0)).collect();
    let mass: f64 = residual.iter().sum();
    if mass <= 0.0 {
        return (false, sample_from(p, rng));
    }
    residual.iter_mut().for_each(|v| *v /= mass);
    (false, sample_from(&residual, rng))
}

/// Speculative decoding of `prompt`: `draft` proposes, `target` verifies.
pub fn speculative_generate<T: StepModel, D: StepModel>(
    target: &T,
    draft: &D,
    prompt: &[u32],
    spec: &SpecDecParams,
    params: &GenerationParams,
) -> Result<SpecDecOutput> {
    check_spec(target, draft, prompt, spec, params)?;
    let mut out = SpecDecOutput::default();
    let t_state = target.start(prompt, &mut out.target_flops)?;
    let d_state = draft.start(prompt, &mut out.draft_flops)?;
    speculate(target, t_state, draft, d_state, spec, params, out)
}

/// Speculative decoding with a large encoder-decoder target and the hybrid
/// built on it as draft: the large encoder runs once and both models read
/// the same prompt encoding.
pub fn speculative_generate_hybrid(bundle: &HybridBundle, prompt: &[u32], spec: &SpecDecParams, params: &GenerationParams) -> Result<SpecDecOutput> {
    let target = Runner::new(&bundle.llm, true)?;
    let target = RunnerModel(target);
    let draft = HybridModel::new(bundle)?;
    check_spec(&target, &draft, prompt, spec, params)?;
    let mut out = SpecDecOutput::default();
    if bundle.llm_config().arch != Arch::EncoderDecoder {
        let t_state = target.start(prompt, &mut out.target_flops)?;
        let d_state = draft.start(prompt, &mut out.draft_flops)?;
        return speculate(&target, t_state, &draft, d_state, spec, params, out);
    }
    let h = bundle.encode_prompt(prompt, &mut out.target_flops)?;
    let t_state = target.0.start_encoded(h.hidden.data(), &mut out.target_flops)?;
    let d_state = draft.start_with_encoding(prompt, &h, &mut out.draft_flops)?;
    speculate(&target, t_state, &draft, d_state, spec, params, out)
}

struct RunnerModel<'a>(Runner<'a>);

impl StepModel for RunnerModel<'_> {
    type State = RunState;

    fn vocab_size(&self) -> usize {
        self.0.vocab_size()
    }

    fn max_new_tokens(&self, prompt_len: usize) -> usize {
        self.0.max_new_tokens(prompt_len)
    }

    fn start(&self, prompt: &[u32], flops: &mut Flops) -> Result<RunState> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        let x = self.0.embed_tokens(prompt, 0, flops)?;
        self.0.start(x, prompt.len(), flops)
    }

    fn feed(&self, state: &mut RunState, tokens: &[u32], all_rows: bool, flops: &mut Flops) -> Result<Vec<Vec<f32>>> {
        self.0.feed(state, tokens, all_rows, flops)
    }

    fn fed_len(&self, state: &RunState) -> usize {
        state.fed().len()
    }

    fn rollback(&self, state: &mut RunState, fed_len: usize) {
        self.0.rollback(state, fed_len)
    }
}

fn check_spec<T: StepModel, D: StepModel>(target: &T, draft: &D, prompt: &[u32], spec: &SpecDecParams, params: &GenerationParams) -> Result<()> {
    params.validate()?;
    if spec.gamma == 0 {
        return Err(Error::contract("draft length must be at least 1"));
    }
    if target.vocab_size() != draft.vocab_size() {
        return Err(Error::contract(format!(
            "target vocabulary {} differs from draft vocabulary {}",
            target.vocab_size(),
            draft.vocab_size()
        )));
    }
    if params.strategy == Strategy::Beam {
        return Err(Error::contract("speculative decoding verifies greedy or sampled drafts, not beams"));
    }
    check_request(target, prompt, params.max_new_tokens)?;
    check_request(draft, prompt, params.max_new_tokens)
}

fn speculate<T: StepModel, D: StepModel>(
    target: &T,
    mut t_state: T::State,
    draft: &D,
    mut d_state: D::State,
    spec: &SpecDecParams,
    params: &GenerationParams,
    mut out: SpecDecOutput,
) -> Result<SpecDecOutput> {
    let n = params.max_new_tokens;
    let greedy = params.strategy == Strategy::Greedy || params.temperature == 0.0;
    let eos = target.eos_id();
    let mut rng: SplitMix64 = rng::derive(params.seed, "speculative");
    let dist = |logits: &mut Vec<f32>| {
        mask_eos(logits, eos, params.suppress_eos);
        nucleus_distribution(logits, params.temperature, params.top_p)
    };
    let mut pending = BOS;
    'outer: while out.tokens.len() < n {
        let gamma = spec.gamma.min(n - out.tokens.len());
        let (t_base, d_base) = (target.fed_len(&t_state), draft.fed_len(&d_state));

        // Draft proposals d_1..d_gamma with their draft distributions.
        let mut proposals = Vec::with_capacity(gamma);
        let mut q_rows = Vec::with_capacity(gamma);
        let mut prev = pending;
        for _ in 0..gamma {
            let mut logits = draft.feed(&mut d_state, &[prev], false, &mut out.draft_flops)?.pop().expect("one row");
            out.stats.draft_calls += 1;
            let d = if greedy {
                mask_eos(&mut logits, eos, params.suppress_eos);
                argmax(&logits)
            } else {
                let q = dist(&mut logits);
                let d = sample_from(&q, &mut rng);
                q_rows.push(q);
                d
            } as u32;
            proposals.push(d);
            prev = d;
        }

        // One target pass over [pending, d_1..d_{gamma-1}] scores every proposal.
        let mut inputs = Vec::with_capacity(gamma);
        inputs.push(pending);
        inputs.extend_from_slice(&proposals[..gamma - 1]);
        let rows = target.feed(&mut t_state, &inputs, true, &mut out.target_flops)?;
        out.stats.target_calls += 1;
        out.stats.proposed += gamma;

        let mut accepted = 0;
        let mut correction = None;
        for (i, mut logits) in rows.into_iter().enumerate() {
            let d = proposals[i];
            let (keep, tok) = if greedy {
                mask_eos(&mut logits, eos, params.suppress_eos);
                let t = argmax(&logits) as u32;
                (t == d, t)
            } else {
                let p = dist(&mut logits);
                let (keep, t) = accept_or_resample(&p, &q_rows[i], d as usize, &mut rng);
                (keep, t as u32)
            };
            if !keep {
                correction = Some(tok);
                break;
            }
            accepted += 1;
        }
        out.stats.accepted += accepted;

        let mut emitted: Vec<u32> = proposals[..accepted].to_vec();
        emitted.extend(correction);
        for (k, &t) in emitted.iter().enumerate() {
            out.tokens.push(t);
            if Some(t) == eos {
                break 'outer;
            }
            let _ = k;
        }
        // Both models have consumed [pending, d_1..d_{gamma-1}]; keep the
        // inputs that precede the last emitted token.
        let keep = emitted.len();
        target.rollback(&mut t_state, t_base + keep);
        draft.rollback(&mut d_state, d_base + keep);
        pending = *emitted.last().expect("at least one token per round");
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Checkpoint, ModelConfig, PlainModel, Role};

    /// Fixed logit table over a 3-token vocabulary indexed by the decoded
    /// prefix.
    #[derive(Clone)]
    struct Table {
        first: [f32; 3],
        second: [[f32; 3]; 3],
    }

    impl StepModel for Table {
        type State = Vec<u32>;

        fn vocab_size(&self) -> usize {
            3
        }

        fn max_new_tokens(&self, _: usize) -> usize {
            2
        }

        fn eos_id(&self) -> Option<u32> {
            None
        }

        fn start(&self, _: &[u32], _: &mut Flops) -> Result<Vec<u32>> {
            Ok(Vec::new())
        }

        fn feed(&self, state: &mut Vec<u32>, tokens: &[u32], all_rows: bool, _: &mut Flops) -> Result<Vec<Vec<f32>>> {
            let mut out = Vec::new();
            for &t in tokens {
                state.push(t);
                let row = match state.len() {
                    1 => self.first.to_vec(),
                    _ => self.second[state[1] as usize].to_vec(),
                };
                out.push(row);
            }
            if !all_rows {
                out.drain(..out.len() - 1);
            }
            Ok(out)
        }

        fn fed_len(&self, state: &Vec<u32>) -> usize {
            state.len()
        }

        fn rollback(&self, state: &mut Vec<u32>, fed_len: usize) {
            state.truncate(fed_len)
        }
    }

    fn ln_softmax(row: &[f32]) -> Vec<f64> {
        let z: f64 = row.iter().map(|&v| f64::from(v).exp()).sum();
        row.iter().map(|&v| f64::from(v) - z.ln()).collect()
    }

    #[test]
    fn beam_matches_exhaustive_enumeration() {
        // First step favors token 0 slightly, but token 1 leads to a far
        // better continuation; greedy takes 0, beam(2) keeps both.
        let m = Table {
            first: [1.0, 0.9, -3.0],
            second: [[0.2, 0.1, 0.0], [5.0, -1.0, -1.0], [0.0, 0.0, 0.0]],
        };
        let mut paths = Vec::new();
        for a in 0..3usize {
            for b in 0..3usize {
                let lp = ln_softmax(&m.first)[a] + ln_softmax(&m.second[a])[b];
                paths.push((lp, a, b));
            }
        }
        // The two first tokens a width-2 beam keeps.
        let lp1 = ln_softmax(&m.first);
        let mut firsts: Vec<usize> = (0..3).collect();
        firsts.sort_by(|&x, &y| lp1[y].total_cmp(&lp1[x]));
        let kept = &firsts[..2];
        let best = paths.iter().filter(|p| kept.contains(&p.1)).max_by(|x, y| x.0.total_cmp(&y.0)).unwrap();
        let got = generate(&m, &[9], &GenerationParams::beam(2, 2, 0.6)).unwrap();
        assert_eq!(got, vec![best.1 as u32, best.2 as u32]);
        assert_eq!(got, vec![1, 0]);
        assert_eq!(generate(&m, &[9], &GenerationParams::greedy(2)).unwrap(), vec![0, 0]);
    }

    #[test]
    fn beam_score_examples() {
        assert_eq!(beam_score(-3.5, 9, 0.0), -3.5);
        assert_eq!(beam_score(-3.5, 1, 0.6), -3.5);
        assert!((beam_score(-2.0, 7, 0.6) - -1.3195).abs() < 1e-4);
    }

    fn tiny(arch: Arch, seed: u64) -> Checkpoint {
        Checkpoint::init(ModelConfig::new(arch, 16, 2, 2, 259, 48), Role::Slm, seed).unwrap()
    }

    fn scaled(mut ck: Checkpoint, s: f32) -> Checkpoint {
        // Larger weights give peaked, varied distributions from a random init.
        for t in ck.tensors_mut().values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        ck
    }

    #[test]
    fn beam_one_equals_greedy() {
        for (i, arch) in [Arch::DecoderOnly, Arch::EncoderDecoder].into_iter().enumerate() {
            for seed in 0..5 {
                let ck = scaled(tiny(arch, seed + 10 * i as u64), 20.0);
                let m = PlainModel::new(&ck).unwrap();
                let prompt: Vec<u32> = (0..6).map(|k| 3 + ((seed as u32 * 7 + k * 13) % 250)).collect();
                let g = generate(&m, &prompt, &GenerationParams::greedy(12)).unwrap();
                let b = generate(&m, &prompt, &GenerationParams::beam(12, 1, 1.7)).unwrap();
                assert_eq!(g, b);
            }
        }
    }

    #[test]
    fn zero_temperature_is_greedy() {
        let ck = scaled(tiny(Arch::DecoderOnly, 4), 20.0);
        let m = PlainModel::new(&ck).unwrap();
        let g = generate(&m, &[5, 6, 7], &GenerationParams::greedy(10)).unwrap();
        for seed in 0..3 {
            assert_eq!(generate(&m, &[5, 6, 7], &GenerationParams::nucleus(10, 0.9, 0.0, seed)).unwrap(), g);
            assert_eq!(generate(&m, &[5, 6, 7], &GenerationParams::nucleus(10, 1.0, 1e-6, seed)).unwrap(), g);
        }
    }

    #[test]
    fn nucleus_is_seed_deterministic() {
        let ck = tiny(Arch::DecoderOnly, 4);
        let m = PlainModel::new(&ck).unwrap();
        let a = generate(&m, &[5, 6], &GenerationParams::nucleus(10, 0.9, 1.0, 7)).unwrap();
        let b = generate(&m, &[5, 6], &GenerationParams::nucleus(10, 0.9, 1.0, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn request_errors() {
        let ck = tiny(Arch::DecoderOnly, 1);
        let m = PlainModel::new(&ck).unwrap();
        assert!(matches!(generate(&m, &[], &GenerationParams::greedy(3)), Err(Error::EmptyPrompt)));
        let long: Vec<u32> = vec![5; 40];
        assert!(matches!(generate(&m, &long, &GenerationParams::greedy(9)), Err(Error::Length { .. })));
        assert!(generate(&m, &long, &GenerationParams::greedy(8)).is_ok());
        let mut p = GenerationParams::greedy(3);
        p.top_p = 0.0;
        assert!(generate(&m, &[5], &p).is_err());
    }

    #[test]
    fn suppressed_eos_runs_to_length() {
        let ck = tiny(Arch::EncoderDecoder, 2);
        let m = PlainModel::new(&ck).unwrap();
        let mut p = GenerationParams::greedy(20);
        p.suppress_eos = true;
        let out = generate(&m, &[5, 6, 7], &p).unwrap();
        assert_eq!(out.len(), 20);
        assert!(!out.contains(&EOS));
    }

    #[test]
    fn nucleus_distribution_truncates() {
        let p = nucleus_distribution(&[0.0, (3f32).ln(), (6f32).ln()], 1.0, 0.6);
        // probabilities 0.1, 0.3, 0.6: top-0.6 keeps only the last token.
        assert_eq!(p, vec![0.0, 0.0, 1.0]);
        let p = nucleus_distribution(&[0.0, (3f32).ln(), (6f32).ln()], 1.0, 0.8);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-6 && p[0] == 0.0);
    }

    #[test]
    fn accept_or_resample_preserves_target() {
        let p = [0.7, 0.2, 0.05, 0.05];
        let q = [0.25; 4];
        let mut rng = rng::seeded(3);
        let mut counts = [0usize; 4];
        let trials = 100_000;
        for _ in 0..trials {
            let x = sample_from(&q, &mut rng);
            counts[accept_or_resample(&p, &q, x, &mut rng).1] += 1;
        }
        for (c, pi) in counts.iter().zip(p) {
            let sigma = (pi * (1.0 - pi) / trials as f64).sqrt();
            assert!((*c as f64 / trials as f64 - pi).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn speculative_greedy_matches_target() {
        let target = scaled(tiny(Arch::EncoderDecoder, 21), 15.0);
        let draft = scaled(tiny(Arch::DecoderOnly, 22), 15.0);
        let (t, d) = (PlainModel::new(&target).unwrap(), PlainModel::new(&draft).unwrap());
        for gamma in [1, 3, 4] {
            let spec = SpecDecParams { gamma };
            let params = GenerationParams::greedy(15);
            let out = speculative_generate(&t, &d, &[8, 9, 10, 11], &spec, &params).unwrap();
            assert_eq!(out.tokens, generate(&t, &[8, 9, 10, 11], &params).unwrap());
            let n = out.tokens.len();
            assert!(out.stats.target_calls >= n.div_ceil(gamma) && out.stats.target_calls <= n);
        }
    }

    #[test]
    fn speculative_self_draft_accepts_everything() {
        let ck = scaled(tiny(Arch::DecoderOnly, 5), 15.0);
        let m = PlainModel::new(&ck).unwrap();
        let mut params = GenerationParams::greedy(13);
        params.suppress_eos = true;
        let out = speculative_generate(&m, &m, &[4, 5], &SpecDecParams { gamma: 4 }, &params).unwrap();
        assert_eq!(out.tokens, generate(&m, &[4, 5], &params).unwrap());
        assert_eq!(out.stats.accepted, out.stats.proposed);
        assert_eq!(out.stats.target_calls, 13usize.div_ceil(4));
    }

    #[test]
    fn speculative_vocab_mismatch() {
        let a = tiny(Arch::DecoderOnly, 1);
        let b = Checkpoint::init(ModelConfig::new(Arch::DecoderOnly, 16, 1, 2, 67, 48), Role::Slm, 1).unwrap();
        let (a, b) = (PlainModel::new(&a).unwrap(), PlainModel::new(&b).unwrap());
        let r = speculative_generate(&a, &b, &[4], &SpecDecParams::default(), &GenerationParams::greedy(4));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn cached_and_uncached_agree() {
        for arch in [Arch::DecoderOnly, Arch::EncoderDecoder] {
            let ck = scaled(tiny(arch, 8), 10.0);
            let (c, u) = (PlainModel::new(&ck).unwrap(), PlainModel::uncached(&ck).unwrap());
            for params in [
                GenerationParams::greedy(10),
                GenerationParams::beam(10, 3, 0.6),
                GenerationParams::nucleus(10, 0.9, 1.0, 3),
            ] {
                assert_eq!(generate(&c, &[7, 8, 9], &params).unwrap(), generate(&u, &[7, 8, 9], &params).unwrap());
            }
        }
    }
}
