mod support;

use l2s::bridge::{FusionMode, HybridBundle, HybridModel, TokenizerMode};
use l2s::decoding::{
    accept_or_resample, generate, generate_counted, nucleus_distribution, sample_from, speculative_generate, speculative_generate_hybrid, GenerationParams,
    SpecDecParams,
};
use l2s::model::{decoder_step, Arch, Checkpoint, Flops, KvCache, ModelConfig, PlainModel, Role};
use l2s::tokenizer::BOS;

fn ck(arch: Arch, d: usize, layers: usize, seed: u64) -> Checkpoint {
    Checkpoint::init(ModelConfig::new(arch, d, layers, 2, 67, 64), Role::Slm, seed).unwrap()
}

#[test]
fn greedy_speculation_reproduces_target_greedy() {
    let mut r = support::rng(21);
    let target_dec = ck(Arch::DecoderOnly, 32, 2, 100);
    let target_ed = ck(Arch::EncoderDecoder, 32, 2, 101);
    let drafts = [
        ck(Arch::DecoderOnly, 8, 1, 1),
        ck(Arch::DecoderOnly, 16, 2, 2),
        ck(Arch::EncoderDecoder, 8, 1, 3),
    ];
    for i in 0..50 {
        let prompt = support::random_ids(&mut r, 3 + i % 9, 67);
        let params = GenerationParams {
            suppress_eos: i % 2 == 0,
            ..GenerationParams::greedy(20)
        };
        let target = if i % 3 == 0 { &target_ed } else { &target_dec };
        let draft = &drafts[i % drafts.len()];
        let gamma = 1 + i % 6;
        let want = generate(&PlainModel::new(target).unwrap(), &prompt, &params).unwrap();
        let got = speculative_generate(
            &PlainModel::new(target).unwrap(),
            &PlainModel::new(draft).unwrap(),
            &prompt,
            &SpecDecParams { gamma },
            &params,
        )
        .unwrap();
        assert_eq!(got.tokens, want, "prompt {i}, gamma {gamma}");
        let n = got.tokens.len();
        let s = got.stats;
        assert!(s.target_calls >= n.div_ceil(gamma) && s.target_calls <= n, "prompt {i}: {s:?}");
        assert!((0.0..=1.0).contains(&s.acceptance_rate()));
    }
}

#[test]
fn hybrid_draft_reproduces_its_large_model() {
    let mut r = support::rng(22);
    let llm = Checkpoint::init(ModelConfig::new(Arch::EncoderDecoder, 32, 2, 2, 67, 64), Role::Llm, 5).unwrap();
    let bundle = HybridBundle::new(llm.clone(), ck(Arch::DecoderOnly, 8, 1, 6), FusionMode::Add, TokenizerMode::LlmShared, None, 7).unwrap();
    for i in 0..20 {
        let prompt = support::random_ids(&mut r, 4 + i % 5, 67);
        let params = GenerationParams {
            suppress_eos: true,
            ..GenerationParams::greedy(16)
        };
        let want = generate(&PlainModel::new(&llm).unwrap(), &prompt, &params).unwrap();
        let got = speculative_generate_hybrid(&bundle, &prompt, &SpecDecParams { gamma: 4 }, &params).unwrap();
        assert_eq!(got.tokens, want);
    }
}

#[test]
fn self_draft_needs_one_pass_per_gamma_tokens() {
    let m = ck(Arch::DecoderOnly, 16, 2, 8);
    let params = GenerationParams {
        suppress_eos: true,
        ..GenerationParams::greedy(23)
    };
    for gamma in 1..=6 {
        let out = speculative_generate(
            &PlainModel::new(&m).unwrap(),
            &PlainModel::new(&m).unwrap(),
            &[5, 6, 7],
            &SpecDecParams { gamma },
            &params,
        )
        .unwrap();
        assert_eq!(out.tokens.len(), 23);
        assert_eq!(out.stats.target_calls, 23usize.div_ceil(gamma));
        assert_eq!(out.stats.acceptance_rate(), 1.0);
    }
}

#[test]
fn acceptance_rate_matches_overlap_mass() {
    let p = [0.7, 0.2, 0.07, 0.03];
    let q = [0.25; 4];
    let overlap: f64 = p.iter().zip(&q).map(|(a, b)| f64::min(*a, *b)).sum();
    let trials = 100_000;
    let mut r = support::rng(23);
    let mut accepted = 0;
    let mut emitted = [0usize; 4];
    for _ in 0..trials {
        let x = sample_from(&q, &mut r);
        let (keep, t) = accept_or_resample(&p, &q, x, &mut r);
        accepted += keep as usize;
        emitted[t] += 1;
    }
    let rate = accepted as f64 / trials as f64;
    assert!((rate - overlap).abs() < 0.01, "{rate} vs {overlap}");
    // Whatever is emitted follows the target distribution.
    for (k, &c) in emitted.iter().enumerate() {
        let sd = (p[k] * (1.0 - p[k]) / trials as f64).sqrt();
        assert!((c as f64 / trials as f64 - p[k]).abs() <= 3.0 * sd, "symbol {k}");
    }
}

#[test]
fn sampled_speculation_stays_in_range() {
    let target = ck(Arch::DecoderOnly, 16, 1, 30);
    let draft = ck(Arch::DecoderOnly, 8, 1, 31);
    for seed in 0..10 {
        let params = GenerationParams {
            suppress_eos: true,
            ..GenerationParams::nucleus(12, 0.9, 1.0, seed)
        };
        let out = speculative_generate(
            &PlainModel::new(&target).unwrap(),
            &PlainModel::new(&draft).unwrap(),
            &[4, 5],
            &SpecDecParams { gamma: 4 },
            &params,
        )
        .unwrap();
        assert_eq!(out.tokens.len(), 12);
        assert!(out.stats.target_calls >= 3 && out.stats.target_calls <= 12);
    }
}

#[test]
fn beam_of_one_is_greedy() {
    let mut r = support::rng(24);
    for i in 0..100u64 {
        let arch = if i % 2 == 0 { Arch::DecoderOnly } else { Arch::EncoderDecoder };
        let m = ck(arch, 16, 1 + (i % 2) as usize, 200 + i);
        let prompt = support::random_ids(&mut r, 2 + (i % 7) as usize, 67);
        let alpha = (i % 5) as f64 * 0.3;
        let model = PlainModel::new(&m).unwrap();
        let greedy = generate(&model, &prompt, &GenerationParams::greedy(10)).unwrap();
        let beam = generate(&model, &prompt, &GenerationParams::beam(10, 1, alpha)).unwrap();
        assert_eq!(beam, greedy, "pair {i}");
    }
}

fn three_sigma(counts: &[usize], p: &[f64]) {
    let n: usize = counts.iter().sum();
    for (k, (&c, &pk)) in counts.iter().zip(p).enumerate() {
        let sd = (pk * (1.0 - pk) / n as f64).sqrt();
        let f = c as f64 / n as f64;
        assert!((f - pk).abs() <= 3.0 * sd + 1e-12, "symbol {k}: {f} vs {pk}");
    }
}

#[test]
fn full_nucleus_matches_softmax_frequencies() {
    let logits: [f32; 6] = [1.5, 0.2, -0.7, 2.1, 0.0, -2.5];
    let p = nucleus_distribution(&logits, 1.0, 1.0);
    let want = support::softmax(&logits.map(f64::from));
    let mut r = support::rng(25);
    let mut counts = [0usize; 6];
    for _ in 0..100_000 {
        counts[sample_from(&p, &mut r)] += 1;
    }
    three_sigma(&counts, &want);
}

#[test]
fn first_sampled_token_follows_model_softmax() {
    let m = ck(Arch::DecoderOnly, 8, 1, 40);
    let prompt = [7, 8, 9];
    let mut flops = Flops::default();
    let mut cache = KvCache::new(m.model_config().unwrap(), 16);
    let mut logits = Vec::new();
    for &t in prompt.iter().chain(&[BOS]) {
        logits = decoder_step(&m, &mut cache, t, None, &mut flops).unwrap();
    }
    let mut row: Vec<f64> = logits.iter().map(|&v| f64::from(v)).collect();
    row[2] = f64::NEG_INFINITY;
    let want = support::softmax(&row);
    let model = PlainModel::new(&m).unwrap();
    let mut counts = vec![0usize; 67];
    for seed in 0..20_000 {
        let params = GenerationParams {
            suppress_eos: true,
            ..GenerationParams::nucleus(1, 1.0, 1.0, seed)
        };
        counts[generate(&model, &prompt, &params).unwrap()[0] as usize] += 1;
    }
    three_sigma(&counts, &want);
}

#[test]
fn hybrid_flop_overhead_is_constant_and_exact() {
    let llm = Checkpoint::init(ModelConfig::new(Arch::EncoderDecoder, 48, 2, 4, 67, 128), Role::Llm, 50).unwrap();
    let slm = ck(Arch::DecoderOnly, 16, 2, 51);
    let bundle = HybridBundle::new(llm, slm.clone(), FusionMode::Add, TokenizerMode::LlmShared, None, 52).unwrap();
    let prompt: Vec<u32> = (0..10).map(|i| 3 + i).collect();
    let m = prompt.len() as u64;
    // Hand count: each of the 2 encoder blocks maps every row through q, k,
    // v, o (d x d) and the two MLP layers (d x 4d); the projector is
    // d_l x d_s then d_s x d_s.
    let (dl, ds) = (48u64, 16u64);
    let expected = 2 * m * 2 * (4 * dl * dl + 2 * dl * 4 * dl) + m * 2 * (dl * ds + ds * ds);
    for n in [1, 5, 20, 40] {
        let params = GenerationParams {
            suppress_eos: true,
            ..GenerationParams::greedy(n)
        };
        let mut fh = Flops::default();
        let mut fs = Flops::default();
        let a = generate_counted(&HybridModel::new(&bundle).unwrap(), &prompt, &params, &mut fh).unwrap();
        let b = generate_counted(&PlainModel::new(&slm).unwrap(), &prompt, &params, &mut fs).unwrap();
        assert_eq!((a.len(), b.len()), (n, n));
        assert_eq!(fh.linear - fs.linear, expected, "n = {n}");
        assert_eq!(fh.linear, bundle.flops(m, n as u64));
    }
}
