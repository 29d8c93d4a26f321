//! Layer-wise suppression and contrast losses on injected activation values.

use crate::attention::AuthenticityCorrelation;
use crate::config::RegularizerConfig;
use crate::error::{KidError, Result};
use crate::graph::{Graph, Var};

/// Mean absolute injected correlation, indexed `[layer][sample]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActivationProfile {
    pub per_layer: Vec<Vec<f64>>,
}

impl ActivationProfile {
    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let layers = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != layers) {
            return Err(KidError::Shape("samples disagree on layer count".into()));
        }
        Ok(Self { per_layer: (0..layers).map(|l| samples.iter().map(|s| s[l]).collect()).collect() })
    }

    pub fn layer_count(&self) -> usize {
        self.per_layer.len()
    }

    pub fn batch_size(&self) -> usize {
        self.per_layer.first().map_or(0, Vec::len)
    }

    pub fn layer_mean(&self, layer: usize) -> f64 {
        let v = &self.per_layer[layer];
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// `A_l`: mean of `|Corr̄|` over heads and all token pairs.
pub fn activation_value(corr: &AuthenticityCorrelation) -> f64 {
    let total: f64 = corr.heads.iter().map(|h| h.as_slice().iter().map(|v| v.abs()).sum::<f64>()).sum();
    let count: usize = corr.heads.iter().map(|h| h.len()).sum();
    total / count as f64
}

pub fn activation_node(g: &mut Graph, heads: &[Var]) -> Var {
    let per_head: Vec<Var> = heads.iter().map(|&h| g.mean_abs(h)).collect();
    g.mean(&per_head)
}

/// `Σ_{l ≤ L0} Σ_b max(0, A_l − β) / B`.
pub fn suppression_loss(profile: &ActivationProfile, beta: f64, shallow_cutoff: usize) -> Result<f64> {
    if shallow_cutoff >= profile.layer_count() {
        return Err(KidError::InvalidArgument(format!(
            "shallow cutoff {shallow_cutoff} outside {} layers",
            profile.layer_count()
        )));
    }
    let b = profile.batch_size() as f64;
    Ok(profile.per_layer[..=shallow_cutoff]
        .iter()
        .map(|layer| layer.iter().map(|a| (a - beta).max(0.0)).sum::<f64>() / b)
        .sum())
}

/// `Σ_{l ∈ deep} Σ_b max(0, A_l^fake − A_l^real + μ) / B` over paired samples.
pub fn contrast_loss(real: &ActivationProfile, fake: &ActivationProfile, mu: f64, deep_layers: &[usize]) -> Result<f64> {
    if real.batch_size() != fake.batch_size() || real.layer_count() != fake.layer_count() {
        return Err(KidError::InvalidArgument(format!(
            "contrast loss needs paired profiles, got {} real and {} fake samples",
            real.batch_size(),
            fake.batch_size()
        )));
    }
    let b = real.batch_size() as f64;
    let mut total = 0.0;
    for &l in deep_layers {
        if l >= real.layer_count() {
            return Err(KidError::InvalidArgument(format!("deep layer {l} out of range")));
        }
        total += real.per_layer[l]
            .iter()
            .zip(&fake.per_layer[l])
            .map(|(r, f)| (f - r + mu).max(0.0))
            .sum::<f64>()
            / b;
    }
    Ok(total)
}

/// Graph form of the suppression loss; `samples[b][l]` is the activation node.
pub fn suppression_node(g: &mut Graph, samples: &[&[Var]], cfg: &RegularizerConfig) -> Var {
    let mut terms = Vec::new();
    for l in cfg.shallow_layers() {
        for s in samples {
            let shifted = g.add_const(s[l], -cfg.beta);
            terms.push(g.relu(shifted));
        }
    }
    let total = g.sum(&terms);
    g.scale(total, 1.0 / samples.len() as f64)
}

/// Graph form of the contrast loss over `(real, fake)` activation pairs.
pub fn contrast_node(g: &mut Graph, pairs: &[(&[Var], &[Var])], cfg: &RegularizerConfig) -> Var {
    let mut terms = Vec::new();
    for &l in &cfg.deep_layers {
        for (real, fake) in pairs {
            let gap = g.sub(fake[l], real[l]);
            let shifted = g.add_const(gap, cfg.mu);
            terms.push(g.relu(shifted));
        }
    }
    if terms.is_empty() {
        return g.constant(crate::tensor::Mat::scalar(0.0));
    }
    let total = g.sum(&terms);
    g.scale(total, 1.0 / pairs.len() as f64)
}
