//! The autodiff tape: build a small computation, run backward, compare one
//! entry against a central difference.
//!
//!     cargo run --example autodiff

use l2s::autodiff::Tape;
use l2s::tensor::Tensor;

fn loss(x: &Tensor<f64>, w: &Tensor<f64>) -> (f64, Tensor<f64>) {
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let h = tape.matmul(xv, wv).unwrap();
    let h = tape.gelu(h);
    let l = tape.cross_entropy(h, &[0, 2], usize::MAX).unwrap();
    let grads = tape.backward(l).unwrap();
    (tape.value(l).data()[0], grads.get(wv).unwrap().clone())
}

fn main() {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.3, -0.2]]);
    let w = Tensor::from_rows(&[vec![0.1, -0.4, 0.3], vec![0.7, 0.2, -0.5], vec![-0.3, 0.6, 0.4]]);
    let (value, grad) = loss(&x, &w);
    println!("loss {value:.6}");
    println!("dL/dW {:?}", grad.data());

    let h = 1e-6;
    let (mut up, mut down) = (w.clone(), w.clone());
    up.data_mut()[4] += h;
    down.data_mut()[4] -= h;
    let numeric = (loss(&x, &up).0 - loss(&x, &down).0) / (2.0 * h);
    println!("dL/dW[1,1]: tape {:.9}, central difference {numeric:.9}", grad.data()[4]);
}
