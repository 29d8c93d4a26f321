//! AUC under each degradation kind and severity.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::auc;
use super::plot::line_plot;
use crate::backbone::{AttentionMode, Model};
use crate::error::Result;
use crate::synthesis::degrade::{degrade, DegradationKind, MAX_SEVERITY};
use crate::synthesis::ImageSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessTable {
    pub clean_auc: f64,
    /// One row per kind; column `s` holds the AUC at severity `s`, column 0 is clean.
    pub rows: Vec<(DegradationKind, Vec<f64>)>,
}

impl RobustnessTable {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.rows.first().map_or(0, |r| r.1.len()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        let header: Vec<String> = (0..=MAX_SEVERITY).map(|s| format!("severity_{s}")).collect();
        writeln!(f, "kind,{}", header.join(","))?;
        for (kind, aucs) in &self.rows {
            let vals: Vec<String> = aucs.iter().map(|a| format!("{a:.6}")).collect();
            writeln!(f, "{kind},{}", vals.join(","))?;
        }
        Ok(())
    }

    pub fn plot(&self, path: &Path) -> Result<()> {
        let series: Vec<Vec<(f64, f64)>> =
            self.rows.iter().map(|(_, a)| a.iter().enumerate().map(|(s, &v)| (s as f64, v)).collect()).collect();
        line_plot(&series, path)
    }
}

pub fn robustness_sweep(model: &Model, mode: AttentionMode, samples: &[ImageSample]) -> Result<RobustnessTable> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label as u8).collect();
    let score_all = |sev: u8, kind: DegradationKind| -> Result<f64> {
        let scores = samples
            .iter()
            .map(|s| Ok(model.forward(&degrade(&s.pixels, kind, sev)?, mode)?.fake_probability()))
            .collect::<Result<Vec<f64>>>()?;
        auc(&scores, &labels)
    };
    let clean_auc = score_all(0, DegradationKind::Jpeg)?;
    let mut rows = Vec::new();
    for kind in DegradationKind::ALL {
        let mut row = vec![clean_auc];
        for sev in 1..=MAX_SEVERITY {
            row.push(score_all(sev, kind)?);
        }
        rows.push((kind, row));
    }
    Ok(RobustnessTable { clean_auc, rows })
}
