//! Authenticity-correlation heatmaps and per-patch activation maps.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::plot::heatmap_png;
use crate::backbone::{AttentionMode, Model};
use crate::config::PatchActivationMode;
use crate::error::{KidError, Result};
use crate::img::Image;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationViz {
    pub layer: usize,
    /// Head-averaged correlation over all tokens, raw values.
    pub heatmap: Mat,
    /// Patch activation arranged on the patch grid.
    pub patch_grid: Mat,
}

/// Mean absolute correlation of each patch: row means, column means, or their average.
pub fn patch_activation(block: &Mat, mode: PatchActivationMode) -> Vec<f64> {
    let n = block.rows();
    let row = |i: usize| (0..block.cols()).map(|j| block[(i, j)].abs()).sum::<f64>() / block.cols() as f64;
    let col = |j: usize| (0..n).map(|i| block[(i, j)].abs()).sum::<f64>() / n as f64;
    (0..n)
        .map(|i| match mode {
            PatchActivationMode::Row => row(i),
            PatchActivationMode::Column => col(i),
            PatchActivationMode::Symmetric => (row(i) + col(i)) / 2.0,
        })
        .collect()
}

pub fn write_csv(m: &Mat, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v:e}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

/// Computes the layer's correlation and, with `out_dir`, writes
/// `corr_l<layer>.png/.csv` and `patch_activation_l<layer>.png/.csv`.
pub fn export_correlation_viz(
    model: &Model,
    image: &Image,
    layer: usize,
    mode: PatchActivationMode,
    out_dir: Option<&Path>,
) -> Result<CorrelationViz> {
    let layers = model.config().num_layers;
    if layer >= layers {
        return Err(KidError::InvalidArgument(format!("layer {layer} out of range for {layers} layers")));
    }
    let out = model.forward(image, AttentionMode::Injected)?;
    let corr = &out.per_layer_corr[layer];
    let heatmap = corr.head_mean();
    let side = model.config().grid_side();
    let act = patch_activation(&corr.patch_block(), mode);
    let patch_grid = Mat::from_vec(side, side, act)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        heatmap_png(&heatmap, 8, &dir.join(format!("corr_l{layer}.png")))?;
        write_csv(&heatmap, &dir.join(format!("corr_l{layer}.csv")))?;
        heatmap_png(&patch_grid, 16, &dir.join(format!("patch_activation_l{layer}.png")))?;
        write_csv(&patch_grid, &dir.join(format!("patch_activation_l{layer}.csv")))?;
    }
    Ok(CorrelationViz { layer, heatmap, patch_grid })
}

/// Per-patch localization scores on the patch grid, written as a heatmap.
pub fn export_localization_map(model: &Model, image: &Image, path: Option<&Path>) -> Result<Mat> {
    let mut g = crate::graph::Graph::new();
    let trace = model.build(&mut g, image, crate::backbone::ForwardOptions::TRAINING)?;
    let scores = trace.loc_scores.expect("training options enable localization");
    let side = model.config().grid_side();
    let grid = Mat::from_vec(side, side, g.value(scores).as_slice().to_vec())?;
    if let Some(p) = path {
        heatmap_png(&grid, 16, p)?;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_activation_modes_on_a_hand_built_block() {
        let m = Mat::from_rows(&[vec![1.0, -2.0, 0.0], vec![0.0, 3.0, 3.0], vec![-3.0, 0.0, 0.0]]);
        assert_eq!(patch_activation(&m, PatchActivationMode::Row), vec![1.0, 2.0, 1.0]);
        assert_eq!(patch_activation(&m, PatchActivationMode::Column), vec![4.0 / 3.0, 5.0 / 3.0, 1.0]);
        let s = patch_activation(&m, PatchActivationMode::Symmetric);
        assert!((s[0] - 7.0 / 6.0).abs() < 1e-15);
    }
}
