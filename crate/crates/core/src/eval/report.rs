//! Per-layer injected activation statistics split by class.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plot::line_plot;
use crate::backbone::{AttentionMode, Model};
use crate::error::{KidError, Result};
use crate::regularization::activation_value;
use crate::synthesis::{ImageSample, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub real_mean: Vec<f64>,
    pub real_std: Vec<f64>,
    pub fake_mean: Vec<f64>,
    pub fake_std: Vec<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl ActivationReport {
    pub fn num_layers(&self) -> usize {
        self.real_mean.len()
    }

    /// `|mean A_real − mean A_fake|` per layer.
    pub fn class_gap(&self) -> Vec<f64> {
        self.real_mean.iter().zip(&self.fake_mean).map(|(r, f)| (r - f).abs()).collect()
    }

    /// Mean of both classes per layer.
    pub fn overall_mean(&self) -> Vec<f64> {
        self.real_mean.iter().zip(&self.fake_mean).map(|(r, f)| (r + f) / 2.0).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "layer,real_mean,real_std,fake_mean,fake_std")?;
        for l in 0..self.num_layers() {
            writeln!(f, "{l},{},{},{},{}", self.real_mean[l], self.real_std[l], self.fake_mean[l], self.fake_std[l])?;
        }
        Ok(())
    }

    /// Real in the first color, fake in the second.
    pub fn plot(&self, path: &Path) -> Result<()> {
        let series = |v: &[f64]| v.iter().enumerate().map(|(l, &a)| (l as f64, a)).collect::<Vec<_>>();
        line_plot(&[series(&self.real_mean), series(&self.fake_mean)], path)
    }
}

pub fn layerwise_activation_report(model: &Model, samples: &[ImageSample]) -> Result<ActivationReport> {
    if !samples.iter().any(|s| s.label == Label::Real) || !samples.iter().any(|s| s.label == Label::Fake) {
        return Err(KidError::InvalidArgument("activation report needs both classes".into()));
    }
    let layers = model.config().num_layers;
    let mut real = vec![Vec::new(); layers];
    let mut fake = vec![Vec::new(); layers];
    for s in samples {
        let out = model.forward(&s.pixels, AttentionMode::Injected)?;
        let bucket = if s.label == Label::Real { &mut real } else { &mut fake };
        for (l, corr) in out.per_layer_corr.iter().enumerate() {
            bucket[l].push(activation_value(corr));
        }
    }
    let (real_mean, real_std) = real.iter().map(|v| mean_std(v)).unzip();
    let (fake_mean, fake_std) = fake.iter().map(|v| mean_std(v)).unzip();
    Ok(ActivationReport { real_mean, real_std, fake_mean, fake_std })
}
