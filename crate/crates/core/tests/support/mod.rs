//! Test-side oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the library's kernels: the forward oracle
//! reads raw checkpoint tensors and recomputes everything in `f64` loops.
#![allow(dead_code)]

use l2s::autodiff::{Tape, Var};
use l2s::model::{Checkpoint, ModelConfig, TapeModel};
use l2s::tensor::Tensor;
use l2s::tokenizer::{BOS, EOS};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rows = Vec<Vec<f64>>;

fn mat(ck: &Checkpoint, name: &str) -> Rows {
    let t = ck.get(name).unwrap();
    t.data().chunks(t.cols()).map(|r| r.iter().map(|&v| v as f64).collect()).collect()
}

fn vec1(ck: &Checkpoint, name: &str) -> Vec<f64> {
    ck.get(name).unwrap().data().iter().map(|&v| v as f64).collect()
}

fn linear(x: &Rows, ck: &Checkpoint, w: &str, b: &str) -> Rows {
    let (w, b) = (mat(ck, w), vec1(ck, b));
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().zip(&w).map(|(xi, wr)| xi * wr[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn norm(x: &Rows, ck: &Checkpoint, prefix: &str) -> Rows {
    let (g, b) = (vec1(ck, &format!("{prefix}.g")), vec1(ck, &format!("{prefix}.b")));
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
            let s = (var + 1e-5).sqrt();
            row.iter().enumerate().map(|(j, v)| (v - mean) / s * g[j] + b[j]).collect()
        })
        .collect()
}

pub fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(x: &mut Rows, y: &Rows) {
    for (a, b) in x.iter_mut().zip(y) {
        for (p, q) in a.iter_mut().zip(b) {
            *p += q;
        }
    }
}

/// Multi-head attention of `xq` over `xkv`; with `causal`, query `i` sees
/// keys `0..=i`.
fn attention(xq: &Rows, xkv: &Rows, ck: &Checkpoint, prefix: &str, heads: usize, causal: bool) -> Rows {
    let lin = |x: &Rows, p: &str| linear(x, ck, &format!("{prefix}.w{p}"), &format!("{prefix}.b{p}"));
    let (q, k, v) = (lin(xq, "q"), lin(xkv, "k"), lin(xkv, "v"));
    let d = q[0].len();
    let hd = d / heads;
    let mut out = vec![vec![0.0; d]; xq.len()];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..xq.len() {
            let visible = if causal { i + 1 } else { xkv.len() };
            let scores: Vec<f64> = (0..visible)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                out[i][c] = (0..visible).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    lin(&out, "o")
}

fn mlp(x: &mut Rows, ck: &Checkpoint, prefix: &str) {
    let h = norm(x, ck, &format!("{prefix}.ln2"));
    let mut a = linear(&h, ck, &format!("{prefix}.mlp.w1"), &format!("{prefix}.mlp.b1"));
    a.iter_mut().flatten().for_each(|v| *v = gelu_tanh(*v));
    let o = linear(&a, ck, &format!("{prefix}.mlp.w2"), &format!("{prefix}.mlp.b2"));
    add(x, &o);
}

fn embed(ck: &Checkpoint, ids: &[u32]) -> Rows {
    let (tok, pos) = (mat(ck, "tok_emb"), mat(ck, "pos_emb"));
    ids.iter()
        .enumerate()
        .map(|(p, &id)| tok[id as usize].iter().zip(&pos[p]).map(|(a, b)| a + b).collect())
        .collect()
}

fn config(ck: &Checkpoint) -> &ModelConfig {
    ck.model_config().unwrap()
}

/// Final-norm encoder output.
pub fn encode(ck: &Checkpoint, ids: &[u32]) -> Rows {
    let c = config(ck);
    let mut x = embed(ck, ids);
    for i in 0..c.n_layers {
        let p = format!("enc.{i}");
        let h = norm(&x, ck, &format!("{p}.ln1"));
        let a = attention(&h, &h, ck, &format!("{p}.attn"), c.n_heads, false);
        add(&mut x, &a);
        mlp(&mut x, ck, &p);
    }
    norm(&x, ck, "enc.lnf")
}

/// Logits for every row of a causal decoder stream starting at position 0.
pub fn decode(ck: &Checkpoint, ids: &[u32], memory: Option<&Rows>) -> Rows {
    let c = config(ck);
    let mut x = embed(ck, ids);
    for i in 0..c.n_layers {
        let p = format!("dec.{i}");
        let h = norm(&x, ck, &format!("{p}.ln1"));
        let a = attention(&h, &h, ck, &format!("{p}.self"), c.n_heads, true);
        add(&mut x, &a);
        if let Some(mem) = memory {
            let h = norm(&x, ck, &format!("{p}.lnx"));
            let a = attention(&h, mem, ck, &format!("{p}.cross"), c.n_heads, false);
            add(&mut x, &a);
        }
        mlp(&mut x, ck, &p);
    }
    let h = norm(&x, ck, "dec.lnf");
    linear(&h, ck, "head.w", "head.b")
}

pub fn max_abs_diff(a: &Rows, b: &[f32], cols: usize) -> f64 {
    assert_eq!(a.len() * cols, b.len(), "shape mismatch");
    a.iter().flatten().zip(b).map(|(x, &y)| (x - y as f64).abs()).fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

pub fn random_ids(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<u32> {
    (0..len).map(|_| rng.gen_range(3..vocab as u32)).collect()
}

pub fn randn(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<f64> {
    Tensor::randn(shape, std, rng)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Norm-wise relative error between two gradient vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = l2(analytic).max(l2(numeric));
    if scale < 1e-12 {
        l2(&diff)
    } else {
        l2(&diff) / scale
    }
}

pub const FD_STEP: f64 = 1e-5;

/// Worst per-input relative error between backprop and central differences
/// for a scalar loss built from `inputs` (all `f64`).
pub fn grad_check(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let eval = |xs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let l = f(&mut t, &vs);
        t.value(l).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Step for perturbing `f32` checkpoint entries: the power of two nearest
/// `FD_STEP`, so `x ± h` is usually exact in `f32`. Entries where it is not
/// are skipped.
pub const CKPT_STEP: f32 = 1.0 / 131072.0;

/// Coarser exact step for per-tensor localization. Some tensors of a freshly
/// initialized model have gradients near 1e-5, where round-off of the `f64`
/// loss (about 1e-13) dominates central differences at `CKPT_STEP`.
pub const CKPT_COARSE_STEP: f32 = 1.0 / 2048.0;

/// Teacher-forced cross-entropy of one pair, evaluated in `f64`.
pub fn pair_loss(tape: &mut Tape<f64>, model: &TapeModel<'_>, prompt: &[u32], target: &[u32]) -> Var {
    let prefix = model.embed(tape, prompt, 0).unwrap();
    let logits = model.teacher_forced(tape, prefix, prompt.len(), target, false).unwrap();
    let rows = tape.value(logits).rows();
    let dec_rows = target.len() + 1;
    let labels: Vec<usize> = (0..rows - dec_rows)
        .map(|_| usize::MAX)
        .chain(target.iter().map(|&t| t as usize))
        .chain(std::iter::once(EOS as usize))
        .collect();
    tape.cross_entropy(logits, &labels, usize::MAX).unwrap()
}

/// Backprop and central-difference gradients of `pair_loss` at a sample of
/// checkpoint entries (`per_tensor` per tensor), grouped by tensor name.
pub struct ModelGradients {
    pub tensors: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl ModelGradients {
    /// Relative error over every sampled entry together.
    pub fn joint_error(&self) -> f64 {
        let a: Vec<f64> = self.tensors.iter().flat_map(|t| t.1.iter().copied()).collect();
        let n: Vec<f64> = self.tensors.iter().flat_map(|t| t.2.iter().copied()).collect();
        relative_error(&a, &n)
    }

    pub fn per_tensor(&self) -> Vec<(String, f64)> {
        self.tensors.iter().map(|(name, a, n)| (name.clone(), relative_error(a, n))).collect()
    }
}

pub fn model_grad_check(ck: &Checkpoint, prompt: &[u32], target: &[u32], per_tensor: usize, seed: u64, step: f32) -> ModelGradients {
    let mut tape = Tape::new();
    let model = TapeModel::new(&mut tape, ck, true).unwrap();
    let loss = pair_loss(&mut tape, &model, prompt, target);
    let grads = tape.backward(loss).unwrap();
    let eval = |c: &Checkpoint| {
        let mut t = Tape::new();
        let m = TapeModel::new(&mut t, c, true).unwrap();
        let l = pair_loss(&mut t, &m, prompt, target);
        t.value(l).data()[0]
    };
    let mut r = rng(seed);
    let mut out = Vec::new();
    for (name, tensor) in ck.tensors() {
        let g = grads.get(model.params.get(name).unwrap()).unwrap();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        // Rows of the embedding tables the pair never touches have zero
        // gradient; sample where the loss actually depends on the entry.
        let candidates: Vec<usize> = (0..tensor.numel()).filter(|&i| g.data()[i] != 0.0 || !name.ends_with("emb")).collect();
        for _ in 0..per_tensor.min(candidates.len()) {
            let i = candidates[r.gen_range(0..candidates.len())];
            let x = tensor.data()[i];
            let (up, down) = (x + step, x - step);
            let h = step as f64;
            if up as f64 - x as f64 != h || x as f64 - down as f64 != h {
                continue;
            }
            let mut c = ck.clone();
            c.tensors_mut().get_mut(name).unwrap().data_mut()[i] = up;
            let lu = eval(&c);
            c.tensors_mut().get_mut(name).unwrap().data_mut()[i] = down;
            let ld = eval(&c);
            analytic.push(g.data()[i]);
            numeric.push((lu - ld) / (2.0 * h));
        }
        out.push((name.clone(), analytic, numeric));
    }
    ModelGradients { tensors: out }
}

/// Greedy decoding driven by the straight-line oracle (full recomputation
/// every step), for decoder-only models.
pub fn oracle_greedy(ck: &Checkpoint, prompt: &[u32], n: usize) -> Vec<u32> {
    let mut stream = prompt.to_vec();
    stream.push(BOS);
    let mut out = Vec::new();
    for _ in 0..n {
        let logits = decode(ck, &stream, None);
        let last = logits.last().unwrap();
        let mut best = 0;
        for (i, v) in last.iter().enumerate() {
            if *v > last[best] {
                best = i;
            }
        }
        if best as u32 == EOS {
            break;
        }
        out.push(best as u32);
        stream.push(best as u32);
    }
    out
}

/// Softmax of a logit row in `f64`.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}
