//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves bound to
//! trainable parameters request gradients; anything computed only from
//! frozen leaves is evaluated but skipped during the backward sweep.

use std::collections::HashMap;
use std::sync::Arc;

use super::matrix::Matrix;
use super::params::ParamStore;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Rotation angles for rotary position embedding, one row per position.
#[derive(Debug)]
pub struct RopeTable {
    pub head_dim: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    pub fn new(positions: &[f64], head_dim: usize, base: f64) -> Self {
        assert!(head_dim % 2 == 0, "rotary head dimension must be even");
        let half = head_dim / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for &p in positions {
            for i in 0..half {
                let theta = p * base.powf(-2.0 * i as f64 / head_dim as f64);
                cos.push(theta.cos());
                sin.push(theta.sin());
            }
        }
        RopeTable { head_dim, cos, sin }
    }

    /// Rotates every head of `x` in place; `inverse` applies the transpose.
    pub fn apply(&self, x: &mut Matrix, inverse: bool) {
        let half = self.head_dim / 2;
        assert_eq!(x.cols % self.head_dim, 0);
        assert_eq!(self.cos.len(), x.rows * half, "rotary table length");
        let sign = if inverse { -1.0 } else { 1.0 };
        for r in 0..x.rows {
            let (c, s) = (
                &self.cos[r * half..(r + 1) * half],
                &self.sin[r * half..(r + 1) * half],
            );
            for head in x.row_mut(r).chunks_mut(self.head_dim) {
                for i in 0..half {
                    let (a, b) = (head[2 * i], head[2 * i + 1]);
                    let sn = sign * s[i];
                    head[2 * i] = a * c[i] - b * sn;
                    head[2 * i + 1] = a * sn + b * c[i];
                }
            }
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Matrix),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Gather {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        offsets: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Rope {
        x: Var,
        table: Arc<RopeTable>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
        probs: Matrix,
        norm: f64,
    },
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients of trainable parameters, keyed by parameter name.
pub type Gradients = HashMap<String, Matrix>;

/// Gradient of the loss with respect to every node of a tape.
pub struct NodeGrads {
    grads: Vec<Option<Matrix>>,
}

impl NodeGrads {
    /// `None` when the node does not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for parameter `name`; repeated requests return the same leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let p = store
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_nt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// Adds the 1×n row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        let bias = self.value(b);
        assert_eq!(bias.rows, 1);
        assert_eq!(bias.cols, self.value(x).cols);
        let bias = bias.data.clone();
        let mut value = self.value(x).clone();
        for r in 0..value.rows {
            for (v, b) in value.row_mut(r).iter_mut().zip(&bias) {
                *v += b;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(value, Op::AddRow(x, b), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut value = self.value(x).clone();
        value.scale_in_place(s);
        let ng = self.ng(x);
        self.push(value, Op::Scale(x, s), ng)
    }

    /// Elementwise product with a constant matrix of the same shape.
    pub fn mul_const(&mut self, x: Var, m: Matrix) -> Var {
        let mut value = self.value(x).clone();
        assert_eq!(value.shape(), m.shape());
        for (v, k) in value.data.iter_mut().zip(&m.data) {
            *v *= k;
        }
        let ng = self.ng(x);
        self.push(value, Op::MulConst(x, m), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        for v in value.data.iter_mut() {
            let x = *v;
            *v = 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh());
        }
        let ng = self.ng(x);
        self.push(value, Op::Gelu(x), ng)
    }

    /// Row-wise layer normalization with affine parameters (1×n rows).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut value = xhat.clone();
        for r in 0..rows {
            for ((v, gg), bb) in value.row_mut(r).iter_mut().zip(&g.data).zip(&b.data) {
                *v = *v * gg + bb;
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Row-wise softmax. Columns with `key_mask[c] == false` get probability 0;
    /// a row with no admissible column is all zeros.
    pub fn softmax(&mut self, x: Var, key_mask: Option<&[bool]>) -> Var {
        let mut value = self.value(x).clone();
        for r in 0..value.rows {
            softmax_in_place(value.row_mut(r), key_mask);
        }
        let ng = self.ng(x);
        self.push(value, Op::Softmax(x), ng)
    }

    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let value = self.value(x).gather_rows(&idx);
        let ng = self.ng(x);
        self.push(value, Op::Gather { x, idx }, ng)
    }

    /// Mean of each row block `offsets[i]..offsets[i+1]`; empty blocks give zeros.
    pub fn segment_mean(&mut self, x: Var, offsets: Vec<usize>) -> Var {
        let xv = self.value(x);
        let n = offsets.len() - 1;
        let mut value = Matrix::zeros(n, xv.cols);
        for i in 0..n {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            if hi == lo {
                continue;
            }
            let out = value.row_mut(i);
            for r in lo..hi {
                for (o, v) in out.iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            out.iter_mut().for_each(|o| *o *= inv);
        }
        let ng = self.ng(x);
        self.push(value, Op::SegmentMean { x, offsets }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut at = 0;
            let out = value.row_mut(r);
            for &p in parts {
                let src = self.nodes[p.0].value.row(r);
                out[at..at + src.len()].copy_from_slice(src);
                at += src.len();
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        let mut value = Matrix::zeros(xv.rows, width);
        for r in 0..xv.rows {
            value
                .row_mut(r)
                .copy_from_slice(&xv.row(r)[start..start + width]);
        }
        let ng = self.ng(x);
        self.push(value, Op::SliceCols { x, start }, ng)
    }

    pub fn rope(&mut self, x: Var, table: Arc<RopeTable>) -> Var {
        let mut value = self.value(x).clone();
        table.apply(&mut value, false);
        let ng = self.ng(x);
        self.push(value, Op::Rope { x, table }, ng)
    }

    /// Sum over `targets` of −log softmax(logits[row][..classes])[class],
    /// divided by `norm`. Columns at or beyond `classes` are ignored.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: Vec<(usize, usize)>,
        classes: usize,
        norm: f64,
    ) -> Var {
        let lv = self.value(logits);
        let mut probs = Matrix::zeros(targets.len(), classes);
        let mut total = 0.0;
        for (t, &(r, c)) in targets.iter().enumerate() {
            let p = probs.row_mut(t);
            p.copy_from_slice(&lv.row(r)[..classes]);
            let lse = log_sum_exp(p);
            total += lse - p[c];
            p.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let ng = self.ng(logits);
        self.push(
            Matrix::from_vec(1, 1, vec![total / norm]),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                norm,
            },
            ng,
        )
    }

    /// Leaf whose gradient can be read back with [`NodeGrads::wrt`].
    pub fn watched(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Back-propagates from the 1×1 node `loss` over every node.
    pub fn backward_all(&self, loss: Var) -> NodeGrads {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        NodeGrads { grads }
    }

    /// Back-propagates from `loss` and returns gradients of every trainable
    /// parameter leaf (zeros where no path exists).
    pub fn backward(&self, loss: Var) -> Gradients {
        let mut all = self.backward_all(loss);
        self.params
            .iter()
            .filter(|(_, v)| self.ng(**v))
            .map(|(name, v)| {
                let value = &self.nodes[v.0].value;
                let g = all.grads[v.0]
                    .take()
                    .unwrap_or_else(|| Matrix::zeros(value.rows, value.cols));
                (name.clone(), g)
            })
            .collect()
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, g.matmul_tn(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.ng(*b) {
                    self.accumulate(grads, *b, column_sums(g));
                }
            }
            Op::Scale(x, s) => {
                let mut d = g.clone();
                d.scale_in_place(*s);
                self.accumulate(grads, *x, d);
            }
            Op::MulConst(x, m) => {
                let mut d = g.clone();
                for (v, k) in d.data.iter_mut().zip(&m.data) {
                    *v *= k;
                }
                self.accumulate(grads, *x, d);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let mut d = g.clone();
                for (dv, &x) in d.data.iter_mut().zip(&xv.data) {
                    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                    *dv *= 0.5 * (1.0 + t) + 0.5 * x * dt;
                }
                self.accumulate(grads, *x, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                if self.ng(*gamma) {
                    let mut dg = Matrix::zeros(1, cols);
                    for r in 0..rows {
                        for ((o, gv), xh) in dg.data.iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += gv * xh;
                        }
                    }
                    self.accumulate(grads, *gamma, dg);
                }
                if self.ng(*beta) {
                    self.accumulate(grads, *beta, column_sums(g));
                }
                if self.ng(*x) {
                    let gam = &self.value(*gamma).data;
                    let n = cols as f64;
                    let mut dx = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for c in 0..cols {
                            let dxh = gr[c] * gam[c];
                            s1 += dxh;
                            s2 += dxh * xr[c];
                        }
                        let inv = inv_std[r];
                        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
                            let dxh = gr[c] * gam[c];
                            *o = inv / n * (n * dxh - s1 - xr[c] * s2);
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in dx.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Gather { x, idx } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows, xv.cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SegmentMean { x, offsets } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows, xv.cols);
                for i in 0..offsets.len() - 1 {
                    let (lo, hi) = (offsets[i], offsets[i + 1]);
                    if hi == lo {
                        continue;
                    }
                    let inv = 1.0 / (hi - lo) as f64;
                    for r in lo..hi {
                        for (o, v) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o = v * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut at = 0;
                for &p in parts {
                    let w = self.value(p).cols;
                    if self.ng(p) {
                        let mut d = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            d.row_mut(r).copy_from_slice(&g.row(r)[at..at + w]);
                        }
                        self.accumulate(grads, p, d);
                    }
                    at += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows, xv.cols);
                for r in 0..g.rows {
                    dx.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Rope { x, table } => {
                let mut dx = g.clone();
                table.apply(&mut dx, true);
                self.accumulate(grads, *x, dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                norm,
            } => {
                let lv = self.value(*logits);
                let scale = g.data[0] / norm;
                let mut dx = Matrix::zeros(lv.rows, lv.cols);
                for (t, &(r, c)) in targets.iter().enumerate() {
                    let out = dx.row_mut(r);
                    for (k, p) in probs.row(t).iter().enumerate() {
                        out[k] += scale * p;
                    }
                    out[c] -= scale;
                }
                self.accumulate(grads, *logits, dx);
            }
        }
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols);
    for r in 0..g.rows {
        for (o, v) in out.data.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64], mask: Option<&[bool]>) {
    let allowed = |c: usize| mask.is_none_or(|m| m[c]);
    let mut max = f64::NEG_INFINITY;
    for (c, &v) in row.iter().enumerate() {
        if allowed(c) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        row.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut sum = 0.0;
    for (c, v) in row.iter_mut().enumerate() {
        if allowed(c) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
