//! PCA of final-layer class-token features.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::backbone::{AttentionMode, Model};
use crate::error::{KidError, Result};
use crate::synthesis::ImageSample;
use crate::tensor::Mat;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// `samples × dims` projected coordinates.
    pub coords: Mat,
    /// `features × dims` principal axes, one per column.
    pub axes: Mat,
    pub mean: Vec<f64>,
    /// Variances along each axis, descending.
    pub variances: Vec<f64>,
}

impl PcaResult {
    /// `mean + coords · axesᵀ`.
    pub fn reconstruct(&self) -> Mat {
        self.coords.matmul_t(&self.axes).add_row(&Mat::row_vector(self.mean.clone()))
    }
}

/// Projects centered rows of `features` onto the top `dims` eigenvectors of
/// the sample covariance. Each axis is signed so its largest-magnitude entry
/// is positive.
pub fn pca_features(features: &Mat, dims: usize) -> Result<PcaResult> {
    let (n, d) = features.shape();
    if dims == 0 || dims > d {
        return Err(KidError::InvalidArgument(format!("cannot keep {dims} of {d} dimensions")));
    }
    if n < dims {
        return Err(KidError::InvalidArgument(format!("{n} samples are fewer than {dims} dimensions")));
    }
    let mean: Vec<f64> = features.col_sums().as_slice().iter().map(|s| s / n as f64).collect();
    let centered = Mat::from_fn(n, d, |i, j| features[(i, j)] - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.t_matmul(&centered).scale(1.0 / denom);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, cov.as_slice()));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut axes = Mat::zeros(d, dims);
    let mut variances = Vec::with_capacity(dims);
    for (k, &idx) in order.iter().take(dims).enumerate() {
        let col = eig.eigenvectors.column(idx);
        let pivot = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            axes.as_mut_slice()[j * dims + k] = sign * col[j];
        }
        variances.push(eig.eigenvalues[idx].max(0.0));
    }
    let coords = centered.matmul(&axes);
    Ok(PcaResult { coords, axes, mean, variances })
}

/// Final-layer class-token features, one row per sample.
pub fn class_token_features(model: &Model, mode: AttentionMode, samples: &[ImageSample]) -> Result<Mat> {
    let rows = samples
        .iter()
        .map(|s| Ok(model.forward(&s.pixels, mode)?.class_feature().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Mat::from_rows(&rows))
}

/// CSV with columns `id,label,group,x,y`.
pub fn write_pca_csv(samples: &[ImageSample], pca: &PcaResult, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "id,label,group,x,y")?;
    for (i, s) in samples.iter().enumerate() {
        let y = if pca.coords.cols() > 1 { pca.coords[(i, 1)] } else { 0.0 };
        writeln!(f, "{},{},{},{},{}", s.id, s.label as u8, s.group_id.as_deref().unwrap_or(""), pca.coords[(i, 0)], y)?;
    }
    Ok(())
}
