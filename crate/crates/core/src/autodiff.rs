//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in execution order, so the recording
//! order is already a topological order and [`Tape::backward`] is a single
//! reverse sweep. Nodes that do not depend on a trainable leaf never get a
//! gradient buffer.
//!
//! Every op adds a fixed closed-form FLOP cost to the tape counter:
//!
//! | op | flops |
//! |----|-------|
//! | matmul p×q·q×r | `2pqr` |
//! | add, add_row, mul, scale, relu | `numel` |
//! | gelu | `8·numel` |
//! | softmax | `3·numel` |
//! | layer_norm | `5·numel` |
//! | cross_entropy | `3·numel` of the logits |
//! | sum | `numel` |
//! | embedding, slicing, concatenation | 0 |

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Layer-norm epsilon used everywhere in the crate.
pub const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        count: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Boolean attention mask, `true` where a query row may attend to a key column.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allowed: Rc<Vec<bool>>,
}

impl Mask {
    /// Causal mask where query `i` sees keys `0..=i + offset`.
    pub fn causal(rows: usize, cols: usize, offset: usize) -> Self {
        let allowed = (0..rows).flat_map(|i| (0..cols).map(move |j| j <= i + offset)).collect();
        Self {
            rows,
            cols,
            allowed: Rc::new(allowed),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).map(|(i, j)| f(i, j)).collect();
        Self {
            rows,
            cols,
            allowed: Rc::new(allowed),
        }
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Gradients indexed by [`Var`]; absent for nodes that need none.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    flops: u64,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), flops: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// FLOPs accumulated by every op recorded so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool, flops: u64) -> Var {
        debug_assert!(value.is_finite(), "non-finite value from {op:?}");
        self.flops += flops;
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true, 0)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false, 0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let flops = 2 * (self.value(a).rows() * self.value(a).cols() * self.value(b).cols()) as u64;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), ng, flops))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (p, q, r) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != q {
            return Err(Error::dim("matmul_t", av.shape(), bv.shape()));
        }
        let mut out = vec![T::zero(); p * r];
        T::gemm(
            p,
            q,
            r,
            T::one(),
            av.data(),
            (q as isize, 1),
            bv.data(),
            (1, q as isize),
            T::zero(),
            &mut out,
            r as isize,
        );
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::matrix(p, r, out)?, Op::MatMulT(a, b), ng, 2 * (p * q * r) as u64))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        let n = out.numel() as u64;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), ng, n))
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.numel() != av.cols() {
            return Err(Error::dim("add_row", av.shape(), rv.shape()));
        }
        let mut out = av.clone();
        let cols = av.cols();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o += *r;
            }
        }
        let n = out.numel() as u64;
        let ng = self.ng(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), ng, n))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::dim("mul", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| *x * *y).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        let n = out.numel() as u64;
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), ng, n))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let k = T::lit(s);
        let av = self.value(a);
        let data = av.data().iter().map(|x| *x * k).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let n = out.numel() as u64;
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, s), ng, n)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| x.max(T::zero())).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let n = out.numel() as u64;
        let ng = self.ng(&[a]);
        self.push(out, Op::Relu(a), ng, n)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| gelu(*x)).collect();
        let out = Tensor::new(av.shape().to_vec(), data).expect("same shape");
        let n = out.numel() as u64;
        let ng = self.ng(&[a]);
        self.push(out, Op::Gelu(a), ng, 8 * n)
    }

    /// Row-wise softmax. Masked entries get probability zero.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Mask>) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if let Some(m) = mask {
            if m.shape() != (rows, cols) {
                return Err(Error::dim("softmax mask", av.shape(), &[m.rows, m.cols]));
            }
        }
        let mut out = av.clone();
        for i in 0..rows {
            let row = out.row_mut(i);
            match mask {
                None => crate::tensor::softmax_in_place(row),
                Some(m) => masked_softmax(row, |j| m.allows(i, j)),
            }
        }
        let n = out.numel() as u64;
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::Softmax(a), ng, 3 * n))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let (rows, d) = (xv.rows(), xv.cols());
        if gv.numel() != d || bv.numel() != d {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let eps = T::lit(LN_EPS);
        let inv_d = T::lit(1.0 / d as f64);
        let mut xhat = vec![T::zero(); rows * d];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * d];
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() * inv_d;
            let r = (var + eps).sqrt().recip();
            rstd[i] = r;
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape().to_vec(), out)?;
        let n = out.numel() as u64;
        let ng = self.ng(&[x, gain, bias]);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng, 5 * n))
    }

    /// Gathers rows of `table`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (v, d) = (tv.rows(), tv.cols());
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Decoding { id: id as u32, size: v });
            }
            out.extend_from_slice(tv.row(id));
        }
        let ng = self.ng(&[table]);
        Ok(self.push(Tensor::matrix(ids.len(), d, out)?, Op::Embedding { table, ids: ids.to_vec() }, ng, 0))
    }

    /// Mean negative log-likelihood over rows whose target is not `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, vocab) = (lv.rows(), lv.cols());
        if targets.len() != rows {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len()]));
        }
        let targets: Vec<Option<usize>> = targets.iter().map(|&t| (t != ignore).then_some(t)).collect();
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= vocab) {
            return Err(Error::Decoding { id: *bad as u32, size: vocab });
        }
        let count = targets.iter().flatten().count();
        if count == 0 {
            return Err(Error::UndefinedMean);
        }
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (i, t) in targets.iter().enumerate() {
            let row = &mut probs[i * vocab..(i + 1) * vocab];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|v| (*v - max).exp()).sum::<T>().ln();
            if let Some(t) = t {
                total += lse - row[*t];
            }
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let loss = total / T::lit(count as f64);
        let n = (3 * rows * vocab) as u64;
        let ng = self.ng(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, probs, count }, ng, n))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if start + width > cols {
            return Err(Error::dim("slice_cols", xv.shape(), &[start, width]));
        }
        let mut out = Vec::with_capacity(rows * width);
        for i in 0..rows {
            out.extend_from_slice(&xv.row(i)[start..start + width]);
        }
        let ng = self.ng(&[x]);
        Ok(self.push(Tensor::matrix(rows, width, out)?, Op::SliceCols { x, start }, ng, 0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![T::zero(); rows * total];
        let mut off = 0;
        for (p, w) in parts.iter().zip(&widths) {
            let pv = self.value(*p);
            if pv.rows() != rows {
                return Err(Error::dim("concat_cols", self.value(parts[0]).shape(), pv.shape()));
            }
            for i in 0..rows {
                out[i * total + off..i * total + off + w].copy_from_slice(pv.row(i));
            }
            off += w;
        }
        let ng = self.ng(parts);
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), ng, 0))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(Error::dim("slice_rows", xv.shape(), &[start, len]));
        }
        let out = xv.slice_rows(start, len);
        let ng = self.ng(&[x]);
        Ok(self.push(out, Op::SliceRows { x, start }, ng, 0))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor::concat_rows(&values)?;
        let ng = self.ng(parts);
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), ng, 0))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let s = xv.data().iter().copied().sum::<T>();
        let n = xv.numel() as u64;
        let ng = self.ng(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), ng, n)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Tensor<T>>], v: Var) -> Option<&'g mut [T]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        slot.as_mut().map(|t| t.data_mut())
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q, r) = (av.rows(), av.cols(), bv.cols());
                if let Some(ga) = self.accum(grads, *a) {
                    // dA = dC · Bᵀ
                    T::gemm(p, r, q, T::one(), gd, (r as isize, 1), bv.data(), (1, r as isize), T::one(), ga, q as isize);
                }
                if let Some(gb) = self.accum(grads, *b) {
                    // dB = Aᵀ · dC
                    T::gemm(q, p, r, T::one(), av.data(), (1, q as isize), gd, (r as isize, 1), T::one(), gb, r as isize);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (p, q, r) = (av.rows(), av.cols(), bv.rows());
                if let Some(ga) = self.accum(grads, *a) {
                    // dA = dC · B
                    T::gemm(p, r, q, T::one(), gd, (r as isize, 1), bv.data(), (q as isize, 1), T::one(), ga, q as isize);
                }
                if let Some(gb) = self.accum(grads, *b) {
                    // dB = dCᵀ · A
                    T::gemm(r, p, q, T::one(), gd, (1, r as isize), av.data(), (q as isize, 1), T::one(), gb, q as isize);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if let Some(gv) = self.accum(grads, *v) {
                        add_into(gv, gd);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.accum(grads, *a) {
                    add_into(ga, gd);
                }
                let cols = g.cols();
                if let Some(gr) = self.accum(grads, *row) {
                    for chunk in gd.chunks(cols) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(ga) = self.accum(grads, *a) {
                    for ((o, gi), bi) in ga.iter_mut().zip(gd).zip(bv) {
                        *o += *gi * *bi;
                    }
                }
                if let Some(gb) = self.accum(grads, *b) {
                    for ((o, gi), ai) in gb.iter_mut().zip(gd).zip(av) {
                        *o += *gi * *ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                let k = T::lit(*s);
                if let Some(ga) = self.accum(grads, *a) {
                    for (o, gi) in ga.iter_mut().zip(gd) {
                        *o += *gi * k;
                    }
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.accum(grads, *a) {
                    for ((o, gi), x) in ga.iter_mut().zip(gd).zip(av) {
                        if *x > T::zero() {
                            *o += *gi;
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                if let Some(ga) = self.accum(grads, *a) {
                    for ((o, gi), x) in ga.iter_mut().zip(gd).zip(av) {
                        *o += *gi * gelu_grad(*x);
                    }
                }
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let cols = y.cols();
                if let Some(ga) = self.accum(grads, *a) {
                    for i in 0..y.rows() {
                        let yr = y.row(i);
                        let gr = &gd[i * cols..(i + 1) * cols];
                        let dot: T = yr.iter().zip(gr).map(|(p, q)| *p * *q).sum();
                        for j in 0..cols {
                            ga[i * cols + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = g.cols();
                let rows = g.rows();
                let gv = self.value(*gain).data();
                if let Some(gg) = self.accum(grads, *gain) {
                    for i in 0..rows {
                        for j in 0..d {
                            gg[j] += gd[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                if let Some(gb) = self.accum(grads, *bias) {
                    for chunk in gd.chunks(d) {
                        add_into(gb, chunk);
                    }
                }
                if let Some(gx) = self.accum(grads, *x) {
                    let inv_d = T::lit(1.0 / d as f64);
                    for i in 0..rows {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gd[i * d + j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[i * d + j];
                        }
                        mean_dh = mean_dh * inv_d;
                        mean_dh_h = mean_dh_h * inv_d;
                        for j in 0..d {
                            let dh = gd[i * d + j] * gv[j];
                            gx[i * d + j] += rstd[i] * (dh - mean_dh - xhat[i * d + j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let d = g.cols();
                if let Some(gt) = self.accum(grads, *table) {
                    for (i, id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * d..(id + 1) * d], &gd[i * d..(i + 1) * d]);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                let vocab = self.value(*logits).cols();
                let k = gd[0] / T::lit(*count as f64);
                if let Some(gl) = self.accum(grads, *logits) {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        let row = &mut gl[i * vocab..(i + 1) * vocab];
                        for (o, p) in row.iter_mut().zip(&probs[i * vocab..(i + 1) * vocab]) {
                            *o += *p * k;
                        }
                        row[*t] = row[*t] - k;
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (w, xc) = (g.cols(), self.value(*x).cols());
                if let Some(gx) = self.accum(grads, *x) {
                    for i in 0..g.rows() {
                        add_into(&mut gx[i * xc + start..i * xc + start + w], &gd[i * w..(i + 1) * w]);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if let Some(gp) = self.accum(grads, *p) {
                        for i in 0..g.rows() {
                            add_into(&mut gp[i * w..(i + 1) * w], &gd[i * total + off..i * total + off + w]);
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let c = g.cols();
                if let Some(gx) = self.accum(grads, *x) {
                    add_into(&mut gx[start * c..start * c + gd.len()], gd);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if let Some(gp) = self.accum(grads, *p) {
                        add_into(gp, &gd[off..off + n]);
                    }
                    off += n;
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.accum(grads, *x) {
                    for o in gx.iter_mut() {
                        *o += gd[0];
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn masked_softmax<T: Scalar>(row: &mut [T], allowed: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, v) in row.iter().enumerate() {
        if allowed(j) && *v > max {
            max = *v;
        }
    }
    let mut sum = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if allowed(j) {
            *v = (*v - max).exp_fast();
            sum += *v;
        } else {
            *v = T::zero();
        }
    }
    if sum > T::zero() {
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh-approximated GELU, written as `x · σ(2u)` since
/// `(1 + tanh u) / 2 = σ(2u)`; one `exp` is much cheaper than `tanh`.
pub fn gelu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-T::lit(2.0) * gelu_inner(x)).exp_fast())
}

fn gelu_inner<T: Scalar>(x: T) -> T {
    T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x)
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let s = T::one() / (T::one() + (-T::lit(2.0) * gelu_inner(x)).exp_fast());
    let dinner = T::lit(GELU_K) * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    s + T::lit(2.0) * x * s * (T::one() - s) * dinner
}
