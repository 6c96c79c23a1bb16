use std::collections::HashMap;

use super::tensor::{self, gemm, Tensor};
use super::{ParamId, ParamStore};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A contiguous run of rows attending causally among themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Tensor, rstd: Vec<f32> },
    Attention { q: Var, k: Var, v: Var, segs: Vec<Segment>, heads: usize, probs: Vec<Vec<f32>> },
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    MeanGroups(Var, Vec<Vec<usize>>),
    CrossEntropy { logits: Var, targets: Vec<u32>, weights: Vec<f32>, probs: Tensor },
    Bce { logits: Var, targets: Vec<f32>, weights: Vec<f32> },
    LinComb(Vec<(Var, f32)>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Probability floor applied before the log in binary cross-entropy.
pub const BCE_EPS: f32 = 1e-7;

/// Reverse-mode tape over 2-D f32 tensors.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Parameter leaf; repeated calls for one id return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), store.trainable(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = tensor::matmul(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `a bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = tensor::matmul_t(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds the 1×n `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!((b.rows, b.cols), (1, self.value(a).cols), "add_row bias shape");
        let mut out = self.value(a).clone();
        let cols = out.cols;
        for r in 0..out.rows {
            for (o, x) in out.data[r * cols..(r + 1) * cols].iter_mut().zip(&self.value(bias).data) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(out, Op::AddRow(a, bias), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mul shapes");
        let out = Tensor::from_vec(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect());
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::sigmoid);
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f32::tanh);
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::gelu);
        let ng = self.ng(a);
        self.push(out, Op::Gelu(a), ng)
    }

    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let (out, xhat, rstd) = tensor::layer_norm(self.value(x), &self.value(g).data, &self.value(b).data);
        let ng = self.ng(x) || self.ng(g) || self.ng(b);
        self.push(out, Op::LayerNorm { x, g, b, xhat, rstd }, ng)
    }

    /// Multi-head causal self-attention within each segment. `q`, `k`, `v`
    /// are T×D with heads laid out as contiguous column blocks.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, segs: &[Segment], heads: usize) -> Var {
        let (qt, kt, vt) = (self.value(q), self.value(k), self.value(v));
        let d = qt.cols;
        assert!(d % heads == 0, "width must divide into heads");
        let dh = d / heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut out = Tensor::zeros(qt.rows, d);
        let mut probs = Vec::with_capacity(segs.len() * heads);
        for s in segs {
            for h in 0..heads {
                let (qh, kh, vh) = (head_block(qt, s, h, dh), head_block(kt, s, h, dh), head_block(vt, s, h, dh));
                let mut p = tensor::matmul_t(&qh, &kh);
                for i in 0..s.len {
                    let row = p.row_mut(i);
                    for (j, x) in row.iter_mut().enumerate() {
                        *x = if j <= i { *x * scale } else { f32::NEG_INFINITY };
                    }
                    tensor::softmax_in_place(&mut row[..=i]);
                    row[i + 1..].iter_mut().for_each(|x| *x = 0.0);
                }
                let o = tensor::matmul(&p, &vh);
                write_head_block(&mut out, &o, s, h, dh);
                probs.push(p.data);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(out, Op::Attention { q, k, v, segs: segs.to_vec(), heads, probs }, ng)
    }

    /// Rows of `table` selected (with repetition) by `idx`.
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Var {
        let out = self.value(table).select_rows(idx);
        let ng = self.ng(table);
        self.push(out, Op::Gather(table, idx.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.data[r * cols + off..r * cols + off + t.cols].copy_from_slice(t.row(r));
            }
            off += t.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for &p in parts {
            assert_eq!(self.value(p).cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&self.value(p).data);
        }
        let rows = data.len() / cols.max(1);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_cols(start, len);
        let ng = self.ng(a);
        self.push(out, Op::SliceCols(a, start), ng)
    }

    /// One output row per group: the mean of the listed input rows.
    pub fn mean_groups(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Var {
        let t = self.value(a);
        let mut out = Tensor::zeros(groups.len(), t.cols);
        for (o, g) in groups.iter().enumerate() {
            assert!(!g.is_empty(), "mean over an empty group");
            let inv = 1.0 / g.len() as f32;
            for &r in g {
                for (x, y) in out.row_mut(o).iter_mut().zip(t.row(r)) {
                    *x += y * inv;
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::MeanGroups(a, groups), ng)
    }

    /// `Σ_i w_i · −log softmax(logits_i)[targets_i]`, a 1×1 scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[u32], weights: &[f32]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.rows, targets.len());
        assert_eq!(z.rows, weights.len());
        let mut probs = z.clone();
        let mut loss = 0.0f64;
        for r in 0..z.rows {
            let row = z.row(r);
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = max as f64 + row.iter().map(|&x| ((x - max) as f64).exp()).sum::<f64>().ln();
            loss += weights[r] as f64 * (lse - row[targets[r] as usize] as f64);
            tensor::softmax_in_place(probs.row_mut(r));
        }
        let ng = self.ng(logits);
        self.push(
            Tensor::scalar(loss as f32),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            ng,
        )
    }

    /// Weighted binary cross-entropy of `σ(logits)` against `targets`
    /// (flattened row-major), with the probability clamped to
    /// `[BCE_EPS, 1 − BCE_EPS]` inside the log.
    pub fn bce_logits(&mut self, logits: Var, targets: &[f32], weights: &[f32]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.len(), targets.len());
        assert_eq!(z.len(), weights.len());
        let mut loss = 0.0f64;
        for i in 0..z.len() {
            loss += weights[i] as f64 * bce_term(z.data[i] as f64, targets[i] as f64);
        }
        let ng = self.ng(logits);
        self.push(
            Tensor::scalar(loss as f32),
            Op::Bce { logits, targets: targets.to_vec(), weights: weights.to_vec() },
            ng,
        )
    }

    /// `Σ c_i · x_i` over same-shape terms.
    pub fn lincomb(&mut self, terms: &[(Var, f32)]) -> Var {
        let (r, c) = self.value(terms[0].0).shape();
        let mut out = Tensor::zeros(r, c);
        for &(v, s) in terms {
            for (o, x) in out.data.iter_mut().zip(&self.value(v).data) {
                *o += s * x;
            }
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        self.push(out, Op::LinComb(terms.to_vec()), ng)
    }

    /// Back-propagates from the scalar `loss`, accumulating into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut send = |v: Var, g: Tensor| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => store.accumulate(*id, &gout),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let mut ga = Tensor::zeros(av.rows, av.cols);
                        gemm(&gout, false, bv, true, &mut ga, 1.0, 0.0);
                        send(*a, ga);
                    }
                    if self.ng(*b) {
                        let mut gb = Tensor::zeros(bv.rows, bv.cols);
                        gemm(av, true, &gout, false, &mut gb, 1.0, 0.0);
                        send(*b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        let mut ga = Tensor::zeros(av.rows, av.cols);
                        gemm(&gout, false, bv, false, &mut ga, 1.0, 0.0);
                        send(*a, ga);
                    }
                    if self.ng(*b) {
                        let mut gb = Tensor::zeros(bv.rows, bv.cols);
                        gemm(&gout, true, av, false, &mut gb, 1.0, 0.0);
                        send(*b, gb);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, gout.clone());
                    send(*b, gout);
                }
                Op::AddRow(a, bias) => {
                    if self.ng(*bias) {
                        send(*bias, column_sums(&gout));
                    }
                    send(*a, gout);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        send(*a, zip_map(&gout, bv, |g, y| g * y));
                    }
                    if self.ng(*b) {
                        send(*b, zip_map(&gout, av, |g, x| g * x));
                    }
                }
                Op::Scale(a, s) => send(*a, gout.map(|g| g * s)),
                Op::Sigmoid(a) => send(*a, zip_map(&gout, &node.value, |g, y| g * y * (1.0 - y))),
                Op::Tanh(a) => send(*a, zip_map(&gout, &node.value, |g, y| g * (1.0 - y * y))),
                Op::Gelu(a) => send(*a, zip_map(&gout, self.value(*a), |g, x| g * tensor::gelu_grad(x))),
                Op::LayerNorm { x, g, b, xhat, rstd } => {
                    let gamma = &self.value(*g).data;
                    let n = xhat.cols;
                    if self.ng(*g) {
                        let mut gg = Tensor::zeros(1, n);
                        for r in 0..xhat.rows {
                            for c in 0..n {
                                gg.data[c] += gout.data[r * n + c] * xhat.data[r * n + c];
                            }
                        }
                        send(*g, gg);
                    }
                    if self.ng(*b) {
                        send(*b, column_sums(&gout));
                    }
                    if self.ng(*x) {
                        let mut gx = Tensor::zeros(xhat.rows, n);
                        for r in 0..xhat.rows {
                            let dy = gout.row(r);
                            let xh = xhat.row(r);
                            let mut m1 = 0.0;
                            let mut m2 = 0.0;
                            for c in 0..n {
                                let d = dy[c] * gamma[c];
                                m1 += d;
                                m2 += d * xh[c];
                            }
                            m1 /= n as f32;
                            m2 /= n as f32;
                            let out = gx.row_mut(r);
                            for c in 0..n {
                                out[c] = rstd[r] * (dy[c] * gamma[c] - m1 - xh[c] * m2);
                            }
                        }
                        send(*x, gx);
                    }
                }
                Op::Attention { q, k, v, segs, heads, probs } => {
                    let (qt, kt, vt) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qt.cols;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f32).sqrt();
                    let mut gq = Tensor::zeros(qt.rows, d);
                    let mut gk = Tensor::zeros(qt.rows, d);
                    let mut gv = Tensor::zeros(qt.rows, d);
                    let mut pi = 0;
                    for s in segs {
                        for h in 0..*heads {
                            let p = Tensor::from_vec(s.len, s.len, probs[pi].clone());
                            pi += 1;
                            let go = head_block(&gout, s, h, dh);
                            let (qh, kh, vh) =
                                (head_block(qt, s, h, dh), head_block(kt, s, h, dh), head_block(vt, s, h, dh));
                            let mut dv = Tensor::zeros(s.len, dh);
                            gemm(&p, true, &go, false, &mut dv, 1.0, 0.0);
                            let mut ds = tensor::matmul_t(&go, &vh);
                            for i in 0..s.len {
                                let pr = p.row(i);
                                let dr = ds.row_mut(i);
                                let dot: f32 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                                for j in 0..s.len {
                                    dr[j] = if j <= i { pr[j] * (dr[j] - dot) * scale } else { 0.0 };
                                }
                            }
                            let dq = tensor::matmul(&ds, &kh);
                            let mut dk = Tensor::zeros(s.len, dh);
                            gemm(&ds, true, &qh, false, &mut dk, 1.0, 0.0);
                            write_head_block(&mut gq, &dq, s, h, dh);
                            write_head_block(&mut gk, &dk, s, h, dh);
                            write_head_block(&mut gv, &dv, s, h, dh);
                        }
                    }
                    let (q, k, v) = (*q, *k, *v);
                    // q, k and v may be the same node; `send` accumulates.
                    send(q, gq);
                    send(k, gk);
                    send(v, gv);
                }
                Op::Gather(t, idx) => {
                    let tv = self.value(*t);
                    let mut gt = Tensor::zeros(tv.rows, tv.cols);
                    for (o, &r) in idx.iter().enumerate() {
                        for (x, y) in gt.row_mut(r).iter_mut().zip(gout.row(o)) {
                            *x += y;
                        }
                    }
                    send(*t, gt);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols;
                        if self.ng(p) {
                            send(p, gout.slice_cols(off, c));
                        }
                        off += c;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.ng(p) {
                            let t = self.value(p);
                            send(p, Tensor::from_vec(t.rows, t.cols, gout.data[off..off + n].to_vec()));
                        }
                        off += n;
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    for r in 0..av.rows {
                        ga.row_mut(r)[*start..*start + gout.cols].copy_from_slice(gout.row(r));
                    }
                    send(*a, ga);
                }
                Op::MeanGroups(a, groups) => {
                    let av = self.value(*a);
                    let mut ga = Tensor::zeros(av.rows, av.cols);
                    for (o, g) in groups.iter().enumerate() {
                        let inv = 1.0 / g.len() as f32;
                        for &r in g {
                            for (x, y) in ga.row_mut(r).iter_mut().zip(gout.row(o)) {
                                *x += y * inv;
                            }
                        }
                    }
                    send(*a, ga);
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let s = gout.item();
                    let mut gz = probs.clone();
                    for r in 0..gz.rows {
                        let w = weights[r] * s;
                        let row = gz.row_mut(r);
                        row[targets[r] as usize] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= w);
                    }
                    send(*logits, gz);
                }
                Op::Bce { logits, targets, weights } => {
                    let s = gout.item();
                    let z = self.value(*logits);
                    let data = (0..z.len()).map(|i| s * weights[i] * (tensor::sigmoid(z.data[i]) - targets[i])).collect();
                    send(*logits, Tensor::from_vec(z.rows, z.cols, data));
                }
                Op::LinComb(terms) => {
                    for &(v, c) in terms {
                        send(v, gout.map(|g| g * c));
                    }
                }
            }
        }
    }
}

/// `−[y ln p + (1−y) ln(1−p)]` with `p = σ(z)` clamped to `[ε, 1−ε]`.
pub fn bce_term(z: f64, y: f64) -> f64 {
    let eps = BCE_EPS as f64;
    let p = (1.0 / (1.0 + (-z).exp())).clamp(eps, 1.0 - eps);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn column_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols);
    for r in 0..t.rows {
        for (o, x) in out.data.iter_mut().zip(t.row(r)) {
            *o += x;
        }
    }
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    Tensor::from_vec(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect())
}

fn head_block(t: &Tensor, s: &Segment, h: usize, dh: usize) -> Tensor {
    let mut out = Tensor::zeros(s.len, dh);
    for i in 0..s.len {
        out.row_mut(i).copy_from_slice(&t.row(s.start + i)[h * dh..(h + 1) * dh]);
    }
    out
}

fn write_head_block(t: &mut Tensor, src: &Tensor, s: &Segment, h: usize, dh: usize) {
    for i in 0..s.len {
        t.row_mut(s.start + i)[h * dh..(h + 1) * dh].copy_from_slice(src.row(i));
    }
}
