//! A small reverse-mode autodiff tape over [`Mat`].
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list is a valid topological order for backpropagation.

use std::collections::BTreeMap;

use crate::params::ParamId;
use crate::tensor::Mat;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, inv_std: Vec<f64> },
    Gelu(Var),
    Sigmoid(Var),
    Relu(Var),
    MeanAbs(Var),
    Cols(Var, usize),
    Rows(Var, usize),
    Block(Var, usize, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Mean(Vec<Var>),
    Sum(Vec<Var>),
    CrossEntropy { logits: Var, probs: Mat, target: usize },
    Dice { pred: Var, labels: Mat, smooth: f64 },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of a backward sweep.
pub struct Gradients {
    node_grads: Vec<Option<Mat>>,
    params: BTreeMap<ParamId, Mat>,
}

impl Gradients {
    /// Gradient of the loss with respect to any node (constants included).
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.node_grads[v.0].as_ref()
    }

    /// Gradient accumulated for a parameter across every use in the graph.
    pub fn param(&self, id: ParamId) -> Option<&Mat> {
        self.params.get(&id)
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Mat> {
        self.params
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId, m: Mat) -> Var {
        self.push(m, Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).sub(self.value(b));
        self.push(v, Op::Sub(a, b))
    }

    /// Broadcast-adds the `1 × cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add_row(self.value(b));
        self.push(v, Op::AddRow(a, b))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gain);
        let b = self.value(bias);
        let out = Mat::from_fn(rows, cols, |r, c| xhat[(r, c)] * g[(0, c)] + b[(0, c)]);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// `max(0, a)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Mean of absolute values as a 1x1 node.
    pub fn mean_abs(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let v = m.as_slice().iter().map(|x| x.abs()).sum::<f64>() / m.len() as f64;
        self.push(Mat::scalar(v), Op::MeanAbs(a))
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).cols_slice(start, len);
        self.push(v, Op::Cols(a, start))
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).rows_slice(start, len);
        self.push(v, Op::Rows(a, start))
    }

    pub fn block(&mut self, a: Var, r0: usize, c0: usize, rows: usize, cols: usize) -> Var {
        let v = self.value(a).block(r0, c0, rows, cols);
        self.push(v, Op::Block(a, r0, c0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let v = Mat::concat_cols(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>());
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let v = Mat::concat_rows(&parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>());
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    /// Elementwise mean of same-shaped nodes.
    pub fn mean(&mut self, parts: &[Var]) -> Var {
        let v = self.elementwise_sum(parts).scale(1.0 / parts.len() as f64);
        self.push(v, Op::Mean(parts.to_vec()))
    }

    /// Elementwise sum of same-shaped nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let v = self.elementwise_sum(parts);
        self.push(v, Op::Sum(parts.to_vec()))
    }

    fn elementwise_sum(&self, parts: &[Var]) -> Mat {
        assert!(!parts.is_empty(), "sum of zero nodes");
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.value(p));
        }
        acc
    }

    /// Softmax cross-entropy of a `1 × classes` logit row against a class index.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let probs = self.value(logits).softmax_rows();
        let loss = -probs[(0, target)].max(f64::MIN_POSITIVE).ln();
        self.push(Mat::scalar(loss), Op::CrossEntropy { logits, probs, target })
    }

    /// `1 − (2Σpy + s)/(Σp + Σy + s)` over all entries of `pred` against constant labels.
    pub fn dice(&mut self, pred: Var, labels: Mat, smooth: f64) -> Var {
        let loss = crate::localization::dice_loss_values(self.value(pred).as_slice(), labels.as_slice(), smooth);
        self.push(Mat::scalar(loss), Op::Dice { pred, labels, smooth })
    }

    /// Backpropagates from the 1x1 node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut params: BTreeMap<ParamId, Mat> = BTreeMap::new();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match params.get_mut(id) {
                    Some(existing) => existing.add_assign(&g),
                    None => {
                        params.insert(*id, g.clone());
                    }
                },
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, *a, g.matmul(self.value(*b)));
                    acc(&mut grads, *b, g.t_matmul(self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.scale(-1.0));
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, g.col_sums());
                    acc(&mut grads, *a, g.clone());
                }
                Op::AddConst(a) => acc(&mut grads, *a, g.clone()),
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut dx = Mat::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols() {
                            dx[(r, c)] = y[(r, c)] * (g[(r, c)] - dot);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = xhat.shape();
                    let mut dgain = Mat::zeros(1, cols);
                    let mut dx = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            let dxhat = g[(r, c)] * gv[(0, c)];
                            dgain[(0, c)] += g[(r, c)] * xhat[(r, c)];
                            mean_d += dxhat;
                            mean_dx += dxhat * xhat[(r, c)];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for c in 0..cols {
                            let dxhat = g[(r, c)] * gv[(0, c)];
                            dx[(r, c)] = inv_std[r] * (dxhat - mean_d - xhat[(r, c)] * mean_dx);
                        }
                    }
                    acc(&mut grads, *bias, g.col_sums());
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *x, dx);
                }
                Op::Gelu(a) => {
                    let d = self.value(*a).zip_map(&g, |x, gy| gelu_grad(x) * gy);
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = node.value.zip_map(&g, |y, gy| y * (1.0 - y) * gy);
                    acc(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let d = self.value(*a).zip_map(&g, |x, gy| if x > 0.0 { gy } else { 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::MeanAbs(a) => {
                    let m = self.value(*a);
                    let s = g.item() / m.len() as f64;
                    acc(&mut grads, *a, m.map(|x| if x > 0.0 { s } else if x < 0.0 { -s } else { 0.0 }));
                }
                Op::Cols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Mat::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Rows(a, start) => {
                    let src = self.value(*a);
                    let mut d = Mat::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::Block(a, r0, c0) => {
                    let src = self.value(*a);
                    let mut d = Mat::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r0 + r)[*c0..*c0 + g.cols()].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        acc(&mut grads, p, g.cols_slice(offset, w));
                        offset += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        acc(&mut grads, p, g.rows_slice(offset, h));
                        offset += h;
                    }
                }
                Op::Mean(parts) => {
                    let d = g.scale(1.0 / parts.len() as f64);
                    for &p in parts {
                        acc(&mut grads, p, d.clone());
                    }
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        acc(&mut grads, p, g.clone());
                    }
                }
                Op::CrossEntropy { logits, probs, target } => {
                    let s = g.item();
                    let d = Mat::from_fn(1, probs.cols(), |_, c| {
                        s * (probs[(0, c)] - if c == *target { 1.0 } else { 0.0 })
                    });
                    acc(&mut grads, *logits, d);
                }
                Op::Dice { pred, labels, smooth } => {
                    let p = self.value(*pred);
                    let inter: f64 = p.as_slice().iter().zip(labels.as_slice()).map(|(a, b)| a * b).sum();
                    let denom = p.sum() + labels.sum() + smooth;
                    let numer = 2.0 * inter + smooth;
                    let s = g.item();
                    let d = Mat::from_fn(p.rows(), p.cols(), |r, c| {
                        let y = labels.as_slice()[r * p.cols() + c];
                        -s * (2.0 * y * denom - numer) / (denom * denom)
                    });
                    acc(&mut grads, *pred, d);
                }
            }
            grads[idx] = Some(g);
        }

        Gradients { node_grads: grads, params }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(build)/d(input) against central differences on every input entry.
    fn check(inputs: Vec<Mat>, build: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|m| g.constant(m)).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);
        let eval = |inputs: &[Mat]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().cloned().map(|m| g.constant(m)).collect();
            let out = build(&mut g, &vars);
            g.value(out).item()
        };
        let h = 1e-5;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[k]).cloned().unwrap_or_else(|| Mat::zeros(m.rows(), m.cols()));
            for i in 0..m.len() {
                let mut plus = inputs.clone();
                plus[k].as_mut_slice()[i] += h;
                let mut minus = inputs.clone();
                minus[k].as_mut_slice()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.as_slice()[i];
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
                assert!(err < 1e-5, "input {k} entry {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn matmul_chain_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2), random(&mut rng, 5, 2)], |g, v| {
            let ab = g.matmul(v[0], v[1]);
            let c = g.matmul_t(ab, v[2]);
            let s = g.softmax_rows(c);
            g.mean_abs(s)
        });
    }

    #[test]
    fn layer_norm_gelu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(vec![random(&mut rng, 3, 5), random(&mut rng, 1, 5), random(&mut rng, 1, 5)], |g, v| {
            let n = g.layer_norm(v[0], v[1], v[2]);
            let a = g.gelu(n);
            let s = g.sigmoid(a);
            let blk = g.block(s, 1, 1, 2, 3);
            g.mean_abs(blk)
        });
    }

    #[test]
    fn structural_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(vec![random(&mut rng, 2, 6), random(&mut rng, 1, 6), random(&mut rng, 1, 2)], |g, v| {
            let left = g.cols(v[0], 0, 3);
            let right = g.cols(v[0], 3, 3);
            let m = g.mean(&[left, right]);
            let joined = g.concat_cols(&[m, m]);
            let stacked = g.concat_rows(&[joined, v[1]]);
            let biased = g.add_row(stacked, v[1]);
            let top = g.rows(biased, 0, 1);
            let logits = g.cols(top, 0, 2);
            let logits = g.add(logits, v[2]);
            let ce = g.cross_entropy(logits, 1);
            let hinge = g.add_const(ce, -0.1);
            let r = g.relu(hinge);
            let scaled = g.scale(r, 3.0);
            g.sum(&[scaled, ce])
        });
    }

    #[test]
    fn dice_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels = Mat::from_fn(1, 6, |_, _| rng.gen_range(0.0..1.0));
        check(vec![random(&mut rng, 1, 6)], move |g, v| {
            let p = g.sigmoid(v[0]);
            g.dice(p, labels.clone(), 1.0)
        });
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut g = Graph::new();
        let w = g.param(ParamId(0), Mat::scalar(2.0));
        let w2 = g.param(ParamId(0), Mat::scalar(2.0));
        let y = g.add(w, w2);
        let grads = g.backward(y);
        assert_eq!(grads.param(ParamId(0)).unwrap().item(), 2.0);
    }
}
