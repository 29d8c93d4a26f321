//! Coarse-grained forgery localization branch.
//!
//! A training-only per-patch stream that starts from its own patch embedding,
//! is routed by the softmax of each layer's head-averaged patch correlation
//! block, and ends in a per-patch MLP scored with a soft dice loss against
//! thresholded outer-face fractions.

use crate::attention::AuthenticityCorrelation;
use crate::error::{KidError, Result};
use crate::graph::{Graph, Var};
use crate::img::Mask;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationFeatures {
    /// `N × D`, no class token.
    pub tokens: Mat,
    pub layer_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchLabelMap {
    /// Row-major over the patch grid, each in `[0, 1]`.
    pub labels: Vec<f64>,
    pub grid_shape: (usize, usize),
}

impl PatchLabelMap {
    pub fn uniform(rows: usize, cols: usize, value: f64) -> Self {
        Self { labels: vec![value; rows * cols], grid_shape: (rows, cols) }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels as an `N × 1` column, matching the prediction head output.
    pub fn as_column(&self) -> Mat {
        Mat::from_vec(self.labels.len(), 1, self.labels.clone()).expect("column from vec")
    }
}

pub fn check_thresholds(gamma0: f64, gamma1: f64) -> Result<()> {
    if !(0.0 <= gamma0 && gamma0 < gamma1 && gamma1 <= 1.0) {
        return Err(KidError::InvalidArgument(format!("need 0 <= gamma0 < gamma1 <= 1, got {gamma0}, {gamma1}")));
    }
    Ok(())
}

/// Coarse label of one patch from its outer-face fraction.
#[inline]
pub fn coarse_label(fraction: f64, gamma0: f64, gamma1: f64) -> f64 {
    if fraction < gamma0 {
        0.0
    } else if fraction > gamma1 {
        1.0
    } else {
        fraction
    }
}

pub fn coarse_patch_labels(outer_face: &Mask, patch_size: usize, gamma0: f64, gamma1: f64) -> Result<PatchLabelMap> {
    check_thresholds(gamma0, gamma1)?;
    if patch_size == 0 || outer_face.width() % patch_size != 0 || outer_face.height() % patch_size != 0 {
        return Err(KidError::Shape(format!(
            "{}x{} mask is not divisible into {patch_size}px patches",
            outer_face.width(),
            outer_face.height()
        )));
    }
    let rows = outer_face.height() / patch_size;
    let cols = outer_face.width() / patch_size;
    let area = (patch_size * patch_size) as f64;
    let mut labels = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut count = 0usize;
            for y in pr * patch_size..(pr + 1) * patch_size {
                for x in pc * patch_size..(pc + 1) * patch_size {
                    count += outer_face.get(x, y) as usize;
                }
            }
            labels.push(coarse_label(count as f64 / area, gamma0, gamma1));
        }
    }
    Ok(PatchLabelMap { labels, grid_shape: (rows, cols) })
}

/// Fixed 2-D sinusoidal encoding over a `side × side` patch grid, `N × dim`.
///
/// The first half of the channels encodes the row, the second half the column.
pub fn sinusoidal_position_encoding(side: usize, dim: usize) -> Mat {
    let half = dim / 2;
    let pairs = half / 2;
    Mat::from_fn(side * side, dim, |p, c| {
        let (pos, c) = if c < half { (p / side, c) } else { (p % side, c - half) };
        if pairs == 0 || c >= 2 * pairs {
            return 0.0;
        }
        let freq = 1.0 / 10_000f64.powf((c / 2) as f64 / pairs as f64);
        let angle = pos as f64 * freq;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub fn dice_loss_values(pred: &[f64], labels: &[f64], smooth: f64) -> f64 {
    let inter: f64 = pred.iter().zip(labels).map(|(p, y)| p * y).sum();
    let sp: f64 = pred.iter().sum();
    let sy: f64 = labels.iter().sum();
    1.0 - (2.0 * inter + smooth) / (sp + sy + smooth)
}

pub fn dice_loss(pred: &[f64], labels: &PatchLabelMap, smooth: f64) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(KidError::Shape(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    if !(smooth > 0.0) {
        return Err(KidError::InvalidArgument("dice smoothing must be positive".into()));
    }
    Ok(dice_loss_values(pred, &labels.labels, smooth))
}

/// Graph handles for the per-layer update parameters.
#[derive(Debug, Clone, Copy)]
pub struct UpdateVars {
    pub norm_gain: Var,
    pub norm_bias: Var,
    pub w_kbar: Var,
}

/// `L_{l+1} = softmax(Corr̄_patch) · LN(L_l + PE) · W_K̄`, with `Corr̄_patch` the
/// head-averaged patch block of the layer's correlation.
pub fn update_node(g: &mut Graph, features: Var, corr_heads: &[Var], pe: Var, p: &UpdateVars) -> Var {
    let n = g.value(features).rows();
    let mean = g.mean(corr_heads);
    let patch = g.block(mean, 1, 1, n, n);
    let routing = g.softmax_rows(patch);
    let shifted = g.add(features, pe);
    let normed = g.layer_norm(shifted, p.norm_gain, p.norm_bias);
    let mixed = g.matmul(routing, normed);
    g.matmul(mixed, p.w_kbar)
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Two-layer MLP with sigmoid output: `N × D` → `N × 1` scores.
pub fn head_node(g: &mut Graph, features: Var, p: &HeadVars) -> Var {
    let h = g.matmul(features, p.w1);
    let h = g.add_row(h, p.b1);
    let h = g.gelu(h);
    let o = g.matmul(h, p.w2);
    let o = g.add_row(o, p.b2);
    g.sigmoid(o)
}

/// Layer-norm parameters for the update; `None` means unit gain and zero bias.
pub type NormWeights<'a> = Option<(&'a Mat, &'a Mat)>;

pub fn update_localization_features(
    features: &LocalizationFeatures,
    corr: &AuthenticityCorrelation,
    pe: &Mat,
    norm: NormWeights<'_>,
    w_kbar: &Mat,
) -> Result<LocalizationFeatures> {
    let (n, d) = features.tokens.shape();
    if corr.tokens() != n + 1 {
        return Err(KidError::Shape(format!(
            "{n} localization tokens but correlation covers {} patches",
            corr.tokens().saturating_sub(1)
        )));
    }
    pe.ensure_shape(n, d, "positional encoding")?;
    w_kbar.ensure_shape(d, w_kbar.cols(), "W_K̄")?;
    let mut g = Graph::new();
    let f = g.constant(features.tokens.clone());
    let heads: Vec<Var> = corr.heads.iter().map(|h| g.constant(h.clone())).collect();
    let pe = g.constant(pe.clone());
    let (gain, bias) = match norm {
        Some((gn, bn)) => (gn.clone(), bn.clone()),
        None => (Mat::filled(1, d, 1.0), Mat::zeros(1, d)),
    };
    let vars = UpdateVars { norm_gain: g.constant(gain), norm_bias: g.constant(bias), w_kbar: g.constant(w_kbar.clone()) };
    let out = update_node(&mut g, f, &heads, pe, &vars);
    Ok(LocalizationFeatures { tokens: g.value(out).clone(), layer_index: features.layer_index + 1 })
}

/// Weights of the per-patch prediction MLP.
#[derive(Debug, Clone, Copy)]
pub struct HeadWeights<'a> {
    pub w1: &'a Mat,
    pub b1: &'a Mat,
    pub w2: &'a Mat,
    pub b2: &'a Mat,
}

pub fn patch_prediction_head(features: &LocalizationFeatures, head: HeadWeights<'_>) -> Result<Vec<f64>> {
    let d = features.tokens.cols();
    head.w1.ensure_shape(d, head.w1.cols(), "head w1")?;
    head.b1.ensure_shape(1, head.w1.cols(), "head b1")?;
    head.w2.ensure_shape(head.w1.cols(), 1, "head w2")?;
    head.b2.ensure_shape(1, 1, "head b2")?;
    let mut g = Graph::new();
    let f = g.constant(features.tokens.clone());
    let vars = HeadVars {
        w1: g.constant(head.w1.clone()),
        b1: g.constant(head.b1.clone()),
        w2: g.constant(head.w2.clone()),
        b2: g.constant(head.b2.clone()),
    };
    let out = head_node(&mut g, f, &vars);
    Ok(g.value(out).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn label_rule_examples() {
        assert_eq!(coarse_label(0.1, 0.2, 0.8), 0.0);
        assert_eq!(coarse_label(0.5, 0.2, 0.8), 0.5);
        assert_eq!(coarse_label(0.9, 0.2, 0.8), 1.0);
        assert_eq!(coarse_label(0.2, 0.2, 0.8), 0.2);
        assert_eq!(coarse_label(0.8, 0.2, 0.8), 0.8);
    }

    #[test]
    fn thresholds_out_of_order_rejected() {
        let m = Mask::filled(8, 8, true);
        assert!(coarse_patch_labels(&m, 4, 0.8, 0.2).is_err());
        assert!(coarse_patch_labels(&m, 4, 0.5, 0.5).is_err());
        assert!(coarse_patch_labels(&m, 3, 0.2, 0.8).is_err());
    }

    #[test]
    fn dice_examples() {
        let ones = PatchLabelMap::uniform(2, 2, 1.0);
        assert_eq!(dice_loss(&[1.0; 4], &ones, 1.0).unwrap(), 0.0);
        let zeros = PatchLabelMap::uniform(2, 2, 0.0);
        let expected = 1.0 - 1.0 / (4.0 + 1.0);
        assert!((dice_loss(&[1.0; 4], &zeros, 1.0).unwrap() - expected).abs() < 1e-15);
        assert!(dice_loss(&[1.0; 3], &zeros, 1.0).is_err());
    }

    #[test]
    fn zero_weight_head_scores_half() {
        let f = LocalizationFeatures { tokens: Mat::filled(4, 3, 0.7), layer_index: 2 };
        let (w1, b1, w2, b2) = (Mat::zeros(3, 3), Mat::zeros(1, 3), Mat::zeros(3, 1), Mat::zeros(1, 1));
        let s = patch_prediction_head(&f, HeadWeights { w1: &w1, b1: &b1, w2: &w2, b2: &b2 }).unwrap();
        assert_eq!(s, vec![0.5; 4]);
    }

    #[test]
    fn position_encoding_distinguishes_patches() {
        let pe = sinusoidal_position_encoding(4, 16);
        for a in 0..16 {
            for b in a + 1..16 {
                assert!(pe.row(a).iter().zip(pe.row(b)).any(|(x, y)| (x - y).abs() > 1e-6));
            }
        }
    }

    fn random_corr(rng: &mut ChaCha8Rng, heads: usize, t: usize) -> AuthenticityCorrelation {
        AuthenticityCorrelation {
            layer_index: 0,
            heads: (0..heads).map(|_| Mat::from_fn(t, t, |_, _| rng.gen_range(-2.0..2.0))).collect(),
        }
    }

    #[test]
    fn update_with_zero_correlation_averages_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = LocalizationFeatures { tokens: Mat::from_fn(4, 8, |_, _| rng.gen_range(-1.0..1.0)), layer_index: 0 };
        let pe = sinusoidal_position_encoding(2, 8);
        let w = Mat::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
        let corr = AuthenticityCorrelation { layer_index: 0, heads: vec![Mat::zeros(5, 5); 2] };
        let out = update_localization_features(&f, &corr, &pe, None, &w).unwrap();
        for r in 1..4 {
            assert!(out.tokens.row(r).iter().zip(out.tokens.row(0)).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        let zero = update_localization_features(&f, &corr, &pe, None, &Mat::zeros(8, 8)).unwrap();
        assert_eq!(zero.tokens, Mat::zeros(4, 8));
    }

    #[test]
    fn update_rejects_patch_count_mismatch() {
        let f = LocalizationFeatures { tokens: Mat::zeros(4, 8), layer_index: 0 };
        let corr = AuthenticityCorrelation { layer_index: 0, heads: vec![Mat::zeros(4, 4)] };
        let pe = Mat::zeros(4, 8);
        assert!(update_localization_features(&f, &corr, &pe, None, &Mat::zeros(8, 8)).is_err());
    }

    proptest! {
        #[test]
        fn label_rule_monotone_and_idempotent(a in 0.0f64..=1.0, b in 0.0f64..=1.0, g0 in 0.0f64..0.5, g1 in 0.5f64..=1.0) {
            prop_assume!(g0 < g1);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(coarse_label(lo, g0, g1) <= coarse_label(hi, g0, g1));
            let once = coarse_label(a, g0, g1);
            prop_assert_eq!(coarse_label(once, g0, g1), once);
        }

        #[test]
        fn dice_in_unit_interval(values in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..40)) {
            let pred: Vec<f64> = values.iter().map(|v| v.0).collect();
            let labels: Vec<f64> = values.iter().map(|v| v.1).collect();
            let d = dice_loss_values(&pred, &labels, 1.0);
            prop_assert!((0.0..1.0).contains(&d) || d.abs() < 1e-15);
        }

        #[test]
        fn dice_of_binary_labels_against_themselves_is_zero(bits in proptest::collection::vec(any::<bool>(), 1..40)) {
            let y: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
            prop_assert!(dice_loss_values(&y, &y, 1.0).abs() < 1e-12);
        }

        #[test]
        fn update_is_row_shift_invariant(seed in 0u64..1000, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = LocalizationFeatures { tokens: Mat::from_fn(4, 8, |_, _| rng.gen_range(-1.0..1.0)), layer_index: 0 };
            let pe = sinusoidal_position_encoding(2, 8);
            let w = Mat::from_fn(8, 8, |_, _| rng.gen_range(-1.0..1.0));
            let corr = random_corr(&mut rng, 2, 5);
            let shifted = AuthenticityCorrelation { layer_index: 0, heads: corr.heads.iter().map(|h| h.map(|v| v + shift)).collect() };
            let a = update_localization_features(&f, &corr, &pe, None, &w).unwrap();
            let b = update_localization_features(&f, &shifted, &pe, None, &w).unwrap();
            prop_assert!(a.tokens.max_abs_diff(&b.tokens) < 1e-9);
        }
    }
}
