//! Metrics, diagnostic exports and robustness sweeps.

pub mod pca;
pub mod plot;
pub mod report;
pub mod robustness;
pub mod viz;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KidError, Result};

pub use pca::{pca_features, PcaResult};
pub use report::{layerwise_activation_report, ActivationReport};
pub use robustness::{robustness_sweep, RobustnessTable};
pub use viz::{export_correlation_viz, patch_activation, CorrelationViz};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub id: usize,
    pub group_id: Option<String>,
    /// Fake probability in `[0, 1]`.
    pub score: f64,
    /// 1 = fake.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Frame,
    Video,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame_scores: Vec<FrameScore>,
    pub aggregation: Aggregation,
}

/// Rank-based AUC with midranks for ties (normalized Mann–Whitney U).
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(KidError::Metric(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(KidError::Metric(format!("non-finite score {s}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(KidError::Metric(format!("AUC needs both classes, got {pos} positive and {neg} negative")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * midrank;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

impl EvalRecord {
    /// AUC over frames, or over groups after per-group averaging. Records
    /// without any group id fall back to frame level.
    pub fn auc(&self, k: usize, rng: &mut impl Rng) -> Result<f64> {
        let grouped = self.frame_scores.iter().any(|f| f.group_id.is_some());
        if self.aggregation == Aggregation::Frame || !grouped {
            let s: Vec<f64> = self.frame_scores.iter().map(|f| f.score).collect();
            let l: Vec<u8> = self.frame_scores.iter().map(|f| f.label).collect();
            return auc(&s, &l);
        }
        let mut groups: BTreeMap<(String, u8), Vec<f64>> = BTreeMap::new();
        for f in &self.frame_scores {
            let g = f.group_id.clone().unwrap_or_else(|| format!("#{}", f.id));
            groups.entry((g, f.label)).or_default().push(f.score);
        }
        let mut s = Vec::new();
        let mut l = Vec::new();
        for ((_, label), frames) in &groups {
            s.push(video_score(frames, k, rng)?);
            l.push(*label);
        }
        auc(&s, &l)
    }
}

/// Mean of `min(k, n)` frame scores drawn without replacement.
pub fn video_score(frame_scores: &[f64], k: usize, rng: &mut impl Rng) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(KidError::Metric("video has no frames".into()));
    }
    if k >= frame_scores.len() {
        return Ok(frame_scores.iter().sum::<f64>() / frame_scores.len() as f64);
    }
    let picked = sample(rng, frame_scores.len(), k);
    Ok(picked.iter().map(|i| frame_scores[i]).sum::<f64>() / k as f64)
}
