//! Injection multi-head self-attention (I-MSA).
//!
//! Each head keeps the frozen `softmax(QKᵀ/√d_k)V` path and adds a trainable
//! authenticity correlation `Q̄Kᵀ/√d_k` to the attention logits, where
//! `Q̄ = H·W_Q̄`. The plain-matrix functions here evaluate the same graph code
//! the model trains through.

use crate::backbone::{ForwardOptions, Model};
use crate::error::{KidError, Result};
use crate::graph::{Graph, Var};
use crate::img::Image;
use crate::tensor::Mat;

/// Per-layer, per-head injected correlation matrices, each `(1+N) × (1+N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuthenticityCorrelation {
    pub layer_index: usize,
    pub heads: Vec<Mat>,
}

impl AuthenticityCorrelation {
    pub fn tokens(&self) -> usize {
        self.heads[0].rows()
    }

    /// Elementwise mean over heads.
    pub fn head_mean(&self) -> Mat {
        let mut acc = self.heads[0].clone();
        for h in &self.heads[1..] {
            acc.add_assign(h);
        }
        acc.scale(1.0 / self.heads.len() as f64)
    }

    /// Head-averaged patch-to-patch block (class token row and column removed).
    pub fn patch_block(&self) -> Mat {
        let n = self.tokens() - 1;
        self.head_mean().block(1, 1, n, n)
    }

    pub fn is_finite(&self) -> bool {
        self.heads.iter().all(Mat::is_finite)
    }
}

/// Borrowed view of one layer's injection weights.
#[derive(Debug, Clone, Copy)]
pub struct InjectionWeights<'a> {
    pub w_qbar: &'a Mat,
    pub w_kbar: &'a Mat,
}

/// Graph handles for one attention layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_q: Var,
    pub b_q: Var,
    pub w_k: Var,
    pub b_k: Var,
    pub w_v: Var,
    pub b_v: Var,
    pub w_o: Var,
    pub b_o: Var,
    pub w_qbar: Option<Var>,
}

pub struct ImsaOutput {
    pub out: Var,
    /// One correlation node per head; empty when injection is off.
    pub corr: Vec<Var>,
}

pub fn knowledge_query_node(g: &mut Graph, h: Var, w_qbar: Var) -> Var {
    g.matmul(h, w_qbar)
}

pub fn correlation_node(g: &mut Graph, qbar: Var, k: Var, d_k: usize) -> Var {
    let raw = g.matmul_t(qbar, k);
    g.scale(raw, 1.0 / (d_k as f64).sqrt())
}

/// `softmax(QKᵀ/√d_k [+ corr]) · V`.
pub fn attention_head_node(g: &mut Graph, q: Var, k: Var, v: Var, corr: Option<Var>, d_k: usize) -> Var {
    let raw = g.matmul_t(q, k);
    let mut logits = g.scale(raw, 1.0 / (d_k as f64).sqrt());
    if let Some(c) = corr {
        logits = g.add(logits, c);
    }
    let weights = g.softmax_rows(logits);
    g.matmul(weights, v)
}

/// Full I-MSA layer on already-normalized tokens `x` (`T × D`).
pub fn imsa_node(g: &mut Graph, x: Var, p: &AttentionVars, num_heads: usize) -> ImsaOutput {
    let width = g.value(x).cols();
    let d_k = width / num_heads;
    let q = g.matmul(x, p.w_q);
    let q = g.add_row(q, p.b_q);
    let k = g.matmul(x, p.w_k);
    let k = g.add_row(k, p.b_k);
    let v = g.matmul(x, p.w_v);
    let v = g.add_row(v, p.b_v);
    let qbar = p.w_qbar.map(|w| knowledge_query_node(g, x, w));

    let mut heads = Vec::with_capacity(num_heads);
    let mut corr = Vec::new();
    for h in 0..num_heads {
        let qh = g.cols(q, h * d_k, d_k);
        let kh = g.cols(k, h * d_k, d_k);
        let vh = g.cols(v, h * d_k, d_k);
        let ch = qbar.map(|qb| {
            let qbh = g.cols(qb, h * d_k, d_k);
            correlation_node(g, qbh, kh, d_k)
        });
        if let Some(c) = ch {
            corr.push(c);
        }
        heads.push(attention_head_node(g, qh, kh, vh, ch, d_k));
    }
    let merged = g.concat_cols(&heads);
    let out = g.matmul(merged, p.w_o);
    let out = g.add_row(out, p.b_o);
    ImsaOutput { out, corr }
}

/// `Q̄ = H · W_Q̄` for one head.
pub fn knowledge_query(h: &Mat, w_qbar_head: &Mat) -> Result<Mat> {
    if h.cols() != w_qbar_head.rows() {
        return Err(KidError::Shape(format!(
            "features of width {} cannot be projected by a {}x{} matrix",
            h.cols(),
            w_qbar_head.rows(),
            w_qbar_head.cols()
        )));
    }
    let mut g = Graph::new();
    let hv = g.constant(h.clone());
    let wv = g.constant(w_qbar_head.clone());
    let out = knowledge_query_node(&mut g, hv, wv);
    Ok(g.value(out).clone())
}

/// `Corr̄ = Q̄ · Kᵀ / √d_k`.
pub fn authenticity_correlation(qbar: &Mat, k: &Mat, d_k: usize) -> Result<Mat> {
    if d_k == 0 {
        return Err(KidError::InvalidArgument("d_k must be positive".into()));
    }
    if qbar.shape() != k.shape() || qbar.cols() != d_k {
        return Err(KidError::Shape(format!(
            "Q̄ {:?} and K {:?} must both be tokens x d_k (d_k = {d_k})",
            qbar.shape(),
            k.shape()
        )));
    }
    let mut g = Graph::new();
    let qv = g.constant(qbar.clone());
    let kv = g.constant(k.clone());
    let out = correlation_node(&mut g, qv, kv, d_k);
    Ok(g.value(out).clone())
}

/// `softmax(QKᵀ/√d_k + Corr̄) · V`.
pub fn injected_attention_head(q: &Mat, k: &Mat, v: &Mat, corr: &Mat, d_k: usize) -> Result<Mat> {
    if d_k == 0 {
        return Err(KidError::InvalidArgument("d_k must be positive".into()));
    }
    if q.shape() != k.shape() || k.rows() != v.rows() {
        return Err(KidError::Shape(format!("inconsistent Q {:?}, K {:?}, V {:?}", q.shape(), k.shape(), v.shape())));
    }
    corr.ensure_shape(q.rows(), k.rows(), "correlation matrix")?;
    let mut g = Graph::new();
    let (qv, kv, vv, cv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()), g.constant(corr.clone()));
    let raw = g.matmul_t(qv, kv);
    let scaled = g.scale(raw, 1.0 / (d_k as f64).sqrt());
    let logits = g.add(scaled, cv);
    if !g.value(logits).is_finite() {
        return Err(KidError::NonFinite { layer: 0, stage: "attention logits" });
    }
    let out = attention_head_node(&mut g, qv, kv, vv, Some(cv), d_k);
    Ok(g.value(out).clone())
}

/// Standard scaled dot-product attention for one head.
pub fn standard_attention_head(q: &Mat, k: &Mat, v: &Mat, d_k: usize) -> Result<Mat> {
    injected_attention_head(q, k, v, &Mat::zeros(q.rows(), k.rows()), d_k)
}

/// Relative deviation `‖g_Q − g_Q̄‖∞ / (‖g_Q‖∞ + ε)` per layer.
#[derive(Debug, Clone)]
pub struct SymmetryReport {
    pub per_layer: Vec<f64>,
    /// `‖g_Q‖∞` per layer, to tell a genuine match from two vanishing gradients.
    pub grad_scale: Vec<f64>,
}

impl SymmetryReport {
    pub fn max_deviation(&self) -> f64 {
        self.per_layer.iter().copied().fold(0.0, f64::max)
    }
}

const PROBE_EPS: f64 = 1e-300;

/// Compares `∂L/∂W_Q` and `∂L/∂W_Q̄` on a labelled batch in injected mode.
///
/// `L` is the mean cross-entropy, plus the mean dice loss of the localization
/// branch when `localization` is set (labels come from each sample's mask).
/// `W_Q` gradients are computed for diagnosis only; nothing is updated.
pub fn gradient_deviation(
    model: &Model,
    batch: &[(&Image, usize, &crate::localization::PatchLabelMap)],
    localization: bool,
    dice_smooth: f64,
) -> Result<SymmetryReport> {
    if batch.is_empty() {
        return Err(KidError::InvalidArgument("empty probe batch".into()));
    }
    let mut g = Graph::new();
    let mut terms = Vec::new();
    let opts = ForwardOptions { injected: true, localization };
    for (image, label, labels) in batch {
        let trace = model.build(&mut g, image, opts)?;
        terms.push(g.cross_entropy(trace.logits, *label));
        if let Some(scores) = trace.loc_scores {
            terms.push(g.dice(scores, labels.as_column(), dice_smooth));
        }
    }
    let total = g.sum(&terms);
    let loss = g.scale(total, 1.0 / batch.len() as f64);
    let grads = g.backward(loss);

    let mut per_layer = Vec::new();
    let mut grad_scale = Vec::new();
    for layer in 0..model.config().num_layers {
        let (wq, wqbar) = model.query_param_ids(layer);
        let zero = || Mat::zeros(model.config().embed_dim, model.config().embed_dim);
        let gq = grads.param(wq).cloned().unwrap_or_else(zero);
        let gqbar = grads.param(wqbar).cloned().unwrap_or_else(zero);
        let scale = gq.max_abs();
        per_layer.push(gq.max_abs_diff(&gqbar) / (scale + PROBE_EPS));
        grad_scale.push(scale);
    }
    Ok(SymmetryReport { per_layer, grad_scale })
}

/// Gradient symmetry check for a classification-only model.
///
/// Rejects setups with the localization branch active: the symmetry between
/// `W_Q` and `W_Q̄` only holds when nothing but the attention logits consume `Q̄`.
pub fn gradient_symmetry_probe(
    model: &Model,
    batch: &[(&Image, usize)],
    localization_active: bool,
) -> Result<SymmetryReport> {
    if localization_active {
        return Err(KidError::InvalidArgument(
            "symmetry probe requires the localization branch to be disabled".into(),
        ));
    }
    let n = model.config().num_patches();
    let side = model.config().grid_side();
    let dummy = crate::localization::PatchLabelMap::uniform(side, side, 1.0);
    debug_assert_eq!(dummy.labels.len(), n);
    let full: Vec<_> = batch.iter().map(|(img, y)| (*img, *y, &dummy)).collect();
    gradient_deviation(model, &full, false, 1.0)
}
