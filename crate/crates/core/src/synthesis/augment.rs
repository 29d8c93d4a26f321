//! Training-time augmentation. Only the flip moves pixels, so only the flip
//! touches the mask and landmarks.

use rand::Rng;

use super::{filters, ImageSample};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    HorizontalFlip,
    HueSaturation { hue_shift: f64, saturation_scale: f64 },
    BrightnessContrast { brightness: f64, contrast: f64 },
    Jpeg { quality: u8 },
    Blur { sigma: f64 },
}

impl AugmentOp {
    pub fn is_geometric(&self) -> bool {
        matches!(self, AugmentOp::HorizontalFlip)
    }

    pub fn apply(&self, sample: &ImageSample) -> Result<ImageSample> {
        let mut out = sample.clone();
        match *self {
            AugmentOp::HorizontalFlip => {
                out.pixels = sample.pixels.flip_horizontal();
                out.outer_face_mask = sample.outer_face_mask.flip_horizontal();
                let w = sample.pixels.width() as f64;
                if let Some(lm) = &mut out.landmarks {
                    lm.iter_mut().for_each(|p| p.0 = w - p.0);
                }
            }
            AugmentOp::HueSaturation { hue_shift, saturation_scale } => {
                out.pixels = filters::hue_saturation(&sample.pixels, hue_shift, saturation_scale);
            }
            AugmentOp::BrightnessContrast { brightness, contrast } => {
                out.pixels = filters::brightness_contrast(&sample.pixels, brightness, contrast);
            }
            AugmentOp::Jpeg { quality } => out.pixels = filters::jpeg_roundtrip(&sample.pixels, quality)?,
            AugmentOp::Blur { sigma } => out.pixels = filters::gaussian_blur(&sample.pixels, sigma),
        }
        Ok(out)
    }
}

/// Draws each of the five operations independently with probability one half.
pub fn random_ops(rng: &mut impl Rng) -> Vec<AugmentOp> {
    let mut ops = Vec::new();
    if rng.gen_bool(0.5) {
        ops.push(AugmentOp::HorizontalFlip);
    }
    if rng.gen_bool(0.5) {
        ops.push(AugmentOp::HueSaturation {
            hue_shift: rng.gen_range(-0.03..0.03),
            saturation_scale: rng.gen_range(0.8..1.2),
        });
    }
    if rng.gen_bool(0.5) {
        ops.push(AugmentOp::BrightnessContrast {
            brightness: rng.gen_range(-0.08..0.08),
            contrast: rng.gen_range(0.85..1.15),
        });
    }
    if rng.gen_bool(0.5) {
        ops.push(AugmentOp::Jpeg { quality: rng.gen_range(70..=100) });
    }
    if rng.gen_bool(0.5) {
        ops.push(AugmentOp::Blur { sigma: rng.gen_range(0.1..0.6) });
    }
    ops
}

pub fn apply_ops(sample: &ImageSample, ops: &[AugmentOp]) -> Result<ImageSample> {
    ops.iter().try_fold(sample.clone(), |s, op| op.apply(&s))
}

pub fn augment(sample: &ImageSample, rng: &mut impl Rng) -> Result<ImageSample> {
    apply_ops(sample, &random_ops(rng))
}
