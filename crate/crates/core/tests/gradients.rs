mod support;

use l2s::autodiff::{Mask, Tape, Var};
use l2s::bridge::{init_bridge, BridgeConfig, TapeBridge};
use l2s::model::{Arch, Checkpoint, ModelConfig, Role};
use l2s::tensor::Tensor;

const TOL: f64 = 1e-6;

/// Weighted sum so every output entry gets a distinct upstream gradient.
fn weighted(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(support::randn(&mut support::rng(seed), &shape, 1.0));
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

#[test]
fn projector_ops() {
    let bridge = init_bridge(
        BridgeConfig {
            d_llm: 6,
            d_slm: 4,
            projector: true,
            embed_proj: false,
            new_head_vocab: None,
            soft_prompt_len: None,
        },
        3,
    );
    let h = support::randn(&mut support::rng(1), &[5, 6], 1.0);
    let names = ["proj.w1", "proj.b1", "proj.w2", "proj.b2"];
    let mut inputs = vec![h];
    inputs.extend(names.iter().map(|n| bridge.get(n).unwrap().cast::<f64>()));
    let err = support::grad_check(&inputs, |tape, v| {
        let a = tape.matmul(v[0], v[1]).unwrap();
        let a = tape.add_row(a, v[2]).unwrap();
        let a = tape.relu(a);
        let z = tape.matmul(a, v[3]).unwrap();
        let z = tape.add_row(z, v[4]).unwrap();
        weighted(tape, z, 9)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn projector_through_tape_bridge() {
    // Same check through `TapeBridge::project`, perturbing the f32 bridge
    // entries by an exact step.
    let bridge = init_bridge(
        BridgeConfig {
            d_llm: 6,
            d_slm: 4,
            projector: true,
            embed_proj: false,
            new_head_vocab: None,
            soft_prompt_len: None,
        },
        4,
    );
    let h = support::randn(&mut support::rng(2), &[3, 6], 1.0);
    let loss = |b: &Checkpoint| {
        let mut tape = Tape::<f64>::new();
        let tb = TapeBridge::bind(&mut tape, b, true);
        let hv = tape.constant(h.clone());
        let z = tb.project(&mut tape, hv).unwrap();
        let l = weighted(&mut tape, z, 5);
        let value = tape.value(l).data()[0];
        let grads = tape.backward(l).unwrap();
        let g: Vec<(String, Vec<f64>)> = tb.params().iter().map(|(n, v)| (n.clone(), grads.get(*v).unwrap().data().to_vec())).collect();
        (value, g)
    };
    let (_, analytic) = loss(&bridge);
    let step = support::CKPT_STEP;
    for (name, g) in analytic {
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for i in 0..bridge.get(&name).unwrap().numel() {
            let x = bridge.get(&name).unwrap().data()[i];
            if (x + step) as f64 - x as f64 != step as f64 || x as f64 - (x - step) as f64 != step as f64 {
                continue;
            }
            let mut b = bridge.clone();
            b.tensors_mut().get_mut(&name).unwrap().data_mut()[i] = x + step;
            let up = loss(&b).0;
            b.tensors_mut().get_mut(&name).unwrap().data_mut()[i] = x - step;
            let down = loss(&b).0;
            num.push((up - down) / (2.0 * step as f64));
            ana.push(g[i]);
        }
        let err = support::relative_error(&ana, &num);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn masked_multi_head_attention() {
    let mut r = support::rng(3);
    let x = support::randn(&mut r, &[5, 8], 1.0);
    let wq = support::randn(&mut r, &[8, 8], 0.5);
    let wk = support::randn(&mut r, &[8, 8], 0.5);
    let wv = support::randn(&mut r, &[8, 8], 0.5);
    let err = support::grad_check(&[x, wq, wk, wv], |tape, v| {
        let q = tape.matmul(v[0], v[1]).unwrap();
        let k = tape.matmul(v[0], v[2]).unwrap();
        let val = tape.matmul(v[0], v[3]).unwrap();
        let mut heads = Vec::new();
        for h in 0..2 {
            let qh = tape.slice_cols(q, 4 * h, 4).unwrap();
            let kh = tape.slice_cols(k, 4 * h, 4).unwrap();
            let vh = tape.slice_cols(val, 4 * h, 4).unwrap();
            let s = tape.matmul_t(qh, kh).unwrap();
            let s = tape.scale(s, 0.5);
            let p = tape.softmax_rows(s, Some(&Mask::causal(5, 5, 0))).unwrap();
            heads.push(tape.matmul(p, vh).unwrap());
        }
        let out = tape.concat_cols(&heads).unwrap();
        weighted(tape, out, 4)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn layer_norm() {
    let mut r = support::rng(4);
    let x = support::randn(&mut r, &[4, 7], 2.0);
    let g = support::randn(&mut r, &[7], 1.0);
    let b = support::randn(&mut r, &[7], 1.0);
    let err = support::grad_check(&[x, g, b], |tape, v| {
        let y = tape.layer_norm(v[0], v[1], v[2]).unwrap();
        weighted(tape, y, 6)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn embedding_with_repeated_ids() {
    let table = support::randn(&mut support::rng(5), &[6, 3], 1.0);
    let err = support::grad_check(&[table], |tape, v| {
        let e = tape.embedding(v[0], &[1, 4, 1, 0]).unwrap();
        weighted(tape, e, 7)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn cross_entropy_with_ignored_rows() {
    let logits = support::randn(&mut support::rng(6), &[5, 7], 2.0);
    let err = support::grad_check(&[logits], |tape, v| tape.cross_entropy(v[0], &[3, usize::MAX, 0, 6, 2], usize::MAX).unwrap());
    assert!(err < TOL, "{err}");
}

#[test]
fn two_layer_gelu_mlp() {
    let mut r = support::rng(8);
    let x = support::randn(&mut r, &[4, 5], 1.0);
    let w1 = support::randn(&mut r, &[5, 9], 0.7);
    let b1 = support::randn(&mut r, &[9], 0.1);
    let w2 = support::randn(&mut r, &[9, 3], 0.7);
    let b2 = support::randn(&mut r, &[3], 0.1);
    let err = support::grad_check(&[x, w1, b1, w2, b2], |tape, v| {
        let a = tape.matmul(v[0], v[1]).unwrap();
        let a = tape.add_row(a, v[2]).unwrap();
        let a = tape.gelu(a);
        let o = tape.matmul(a, v[3]).unwrap();
        let o = tape.add_row(o, v[4]).unwrap();
        weighted(tape, o, 10)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn concat_and_slice_rows() {
    let mut r = support::rng(12);
    let a = support::randn(&mut r, &[2, 3], 1.0);
    let b = support::randn(&mut r, &[3, 3], 1.0);
    let err = support::grad_check(&[a, b], |tape, v| {
        let c = tape.concat_rows(&[v[0], v[1]]).unwrap();
        let s = tape.slice_rows(c, 1, 3).unwrap();
        let s = tape.softmax_rows(s, None).unwrap();
        weighted(tape, s, 13)
    });
    assert!(err < TOL, "{err}");
}

fn check_model(arch: Arch, seed: u64) {
    let ck = Checkpoint::init(ModelConfig::new(arch, 8, 2, 2, 67, 16), Role::Slm, seed).unwrap();
    let (prompt, target) = ([5, 6, 7], [8, 9]);
    let fine = support::model_grad_check(&ck, &prompt, &target, 6, seed, support::CKPT_STEP);
    let joint = fine.joint_error();
    assert!(joint < TOL, "{arch:?} joint: {joint}");
    // A wrong gradient in any one tensor shows up as an O(1) error here.
    let coarse = support::model_grad_check(&ck, &prompt, &target, 6, seed, support::CKPT_COARSE_STEP);
    for (name, err) in coarse.per_tensor() {
        assert!(err < 1e-4, "{arch:?} {name}: {err}");
    }
}

#[test]
fn whole_decoder_only_model() {
    check_model(Arch::DecoderOnly, 1);
}

#[test]
fn whole_encoder_decoder_model() {
    check_model(Arch::EncoderDecoder, 2);
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let x = Tensor::<f64>::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
    let mut tape = Tape::new();
    let v = tape.param(x);
    let y = tape.scale(v, 0.0);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert!(g.get(v).unwrap().data().iter().all(|&d| d == 0.0));
}
