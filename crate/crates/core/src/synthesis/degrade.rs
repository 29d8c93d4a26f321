//! Five test-time degradations at severities 0 (identity) through 5.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::filters;
use crate::error::{KidError, Result};
use crate::img::Image;

pub const MAX_SEVERITY: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Jpeg,
    Saturation,
    GaussianBlur,
    GaussianNoise,
    Contrast,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 5] = [
        DegradationKind::Jpeg,
        DegradationKind::Saturation,
        DegradationKind::GaussianBlur,
        DegradationKind::GaussianNoise,
        DegradationKind::Contrast,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Jpeg => "jpeg",
            DegradationKind::Saturation => "saturation",
            DegradationKind::GaussianBlur => "gaussian_blur",
            DegradationKind::GaussianNoise => "gaussian_noise",
            DegradationKind::Contrast => "contrast",
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = KidError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| KidError::InvalidArgument(format!("unknown degradation kind `{s}`")))
    }
}

const JPEG_QUALITY: [u8; 5] = [60, 45, 30, 20, 10];
const SATURATION_SCALE: [f64; 5] = [0.8, 0.6, 0.4, 0.2, 0.0];
const BLUR_SIGMA: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 3.0];
const NOISE_SIGMA: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];
const CONTRAST_SCALE: [f64; 5] = [0.8, 0.65, 0.5, 0.35, 0.2];
const NOISE_SEED: u64 = 0x5EED_0F_401_5E;

/// Deterministic degradation; the noise field is fixed and scaled by severity.
pub fn degrade(img: &Image, kind: DegradationKind, severity: u8) -> Result<Image> {
    if severity > MAX_SEVERITY {
        return Err(KidError::InvalidArgument(format!("severity {severity} above {MAX_SEVERITY}")));
    }
    if severity == 0 {
        return Ok(img.clone());
    }
    let i = severity as usize - 1;
    Ok(match kind {
        DegradationKind::Jpeg => filters::jpeg_roundtrip(img, JPEG_QUALITY[i])?,
        DegradationKind::Saturation => filters::hue_saturation(img, 0.0, SATURATION_SCALE[i]),
        DegradationKind::GaussianBlur => filters::gaussian_blur(img, BLUR_SIGMA[i]),
        DegradationKind::GaussianNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(NOISE_SEED);
            let mut out = img.clone();
            for v in out.as_mut_slice() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += NOISE_SIGMA[i] * z;
            }
            out.clamp01();
            out
        }
        DegradationKind::Contrast => filters::brightness_contrast(img, 0.0, CONTRAST_SCALE[i]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_roundtrip_and_unknown_rejected() {
        for k in DegradationKind::ALL {
            assert_eq!(k.name().parse::<DegradationKind>().unwrap(), k);
        }
        assert!("pixelate".parse::<DegradationKind>().is_err());
    }

    #[test]
    fn severity_above_range_rejected() {
        let img = Image::filled(4, 4, [0.5; 3]);
        assert!(degrade(&img, DegradationKind::Contrast, 6).is_err());
    }
}
