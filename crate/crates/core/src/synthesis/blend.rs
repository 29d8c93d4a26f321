//! Self-blended forgeries: a transformed copy of an image pasted back into
//! itself inside a feathered face mask.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::filters;
use super::{sample_rng, ImageSample, Label};
use crate::error::{KidError, Result};
use crate::img::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskShape {
    LandmarkHull,
    Ellipse,
}

/// One source-side transform with its magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "magnitude")]
pub enum SourceTransform {
    /// Hue rotation in turns.
    HueShift(f64),
    SaturationScale(f64),
    BrightnessShift(f64),
    ContrastScale(f64),
    /// Horizontal shift as a fraction of the width.
    ShiftX(f64),
    ShiftY(f64),
    Zoom(f64),
    Blur(f64),
    Sharpen(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendRecipe {
    pub seed: u64,
    pub mask_shape: MaskShape,
    pub source_transforms: Vec<SourceTransform>,
    /// Gaussian feathering sigma in pixels.
    pub blend_feather: f64,
    /// Scale of the mask region about its centroid.
    pub mask_scale: f64,
}

/// Bounds on random recipes; the forgery should stay subtle.
pub const MAX_SHIFT: f64 = 0.03;
pub const MAX_HUE_SHIFT: f64 = 0.1;

impl BlendRecipe {
    /// Draws a recipe with at least one photometric and one geometric transform.
    pub fn random(seed: u64) -> Self {
        let mut rng = sample_rng(seed, 0xB1E7D);
        let mut t = Vec::new();
        let sign = |rng: &mut rand_chacha::ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        match rng.gen_range(0..3) {
            0 => t.push(SourceTransform::HueShift(sign(&mut rng) * rng.gen_range(0.05..MAX_HUE_SHIFT))),
            1 => t.push(SourceTransform::BrightnessShift(sign(&mut rng) * rng.gen_range(0.1..0.2))),
            _ => t.push(SourceTransform::ContrastScale(rng.gen_range(0.6..0.8))),
        }
        if rng.gen_bool(0.5) {
            t.push(SourceTransform::SaturationScale(rng.gen_range(0.7..1.3)));
        }
        t.push(SourceTransform::ShiftX(sign(&mut rng) * rng.gen_range(0.01..MAX_SHIFT)));
        t.push(SourceTransform::ShiftY(sign(&mut rng) * rng.gen_range(0.0..MAX_SHIFT)));
        if rng.gen_bool(0.3) {
            t.push(SourceTransform::Zoom(rng.gen_range(0.95..1.05)));
        }
        match rng.gen_range(0..3) {
            0 => t.push(SourceTransform::Blur(rng.gen_range(0.3..0.8))),
            1 => t.push(SourceTransform::Sharpen(rng.gen_range(0.2..0.6))),
            _ => {}
        }
        Self {
            seed,
            mask_shape: if rng.gen_bool(0.75) { MaskShape::LandmarkHull } else { MaskShape::Ellipse },
            source_transforms: t,
            blend_feather: rng.gen_range(0.5..1.5),
            mask_scale: rng.gen_range(0.7..0.9),
        }
    }

    /// A recipe whose transforms leave the source unchanged.
    pub fn identity(seed: u64) -> Self {
        Self { seed, mask_shape: MaskShape::Ellipse, source_transforms: Vec::new(), blend_feather: 1.0, mask_scale: 1.0 }
    }
}

pub fn apply_transforms(img: &Image, transforms: &[SourceTransform]) -> Image {
    let mut out = img.clone();
    for t in transforms {
        out = match *t {
            SourceTransform::HueShift(h) => filters::hue_saturation(&out, h, 1.0),
            SourceTransform::SaturationScale(s) => filters::hue_saturation(&out, 0.0, s),
            SourceTransform::BrightnessShift(b) => filters::brightness_contrast(&out, b, 1.0),
            SourceTransform::ContrastScale(c) => filters::brightness_contrast(&out, 0.0, c),
            SourceTransform::ShiftX(d) => filters::affine(&out, d, 0.0, 1.0),
            SourceTransform::ShiftY(d) => filters::affine(&out, 0.0, d, 1.0),
            SourceTransform::Zoom(z) => filters::affine(&out, 0.0, 0.0, z),
            SourceTransform::Blur(s) => filters::gaussian_blur(&out, s),
            SourceTransform::Sharpen(a) => filters::sharpen(&out, a),
        };
    }
    out
}

fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite landmarks"));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn inside_convex(poly: &[(f64, f64)], p: (f64, f64)) -> bool {
    if poly.len() < 3 {
        return false;
    }
    (0..poly.len()).all(|i| {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0
    })
}

/// Hard face-region mask before feathering (`true` = to be blended).
pub fn face_region(sample: &ImageSample, recipe: &BlendRecipe) -> Mask {
    let (w, h) = (sample.pixels.width(), sample.pixels.height());
    let landmarks = sample.landmarks.as_deref().filter(|l| l.len() >= 3);
    let scale = recipe.mask_scale;
    match (recipe.mask_shape, landmarks) {
        (MaskShape::LandmarkHull, Some(lm)) => {
            let hull = convex_hull(lm);
            let (mx, my) = hull.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
            let c = (mx / hull.len() as f64, my / hull.len() as f64);
            let scaled: Vec<_> = hull.iter().map(|p| (c.0 + (p.0 - c.0) * scale, c.1 + (p.1 - c.1) * scale)).collect();
            Mask::from_fn(w, h, |x, y| inside_convex(&scaled, (x as f64 + 0.5, y as f64 + 0.5)))
        }
        _ => {
            // Ellipse through the landmark extent, or a centered default.
            let (cx, cy, ax, ay) = match landmarks {
                Some(lm) => {
                    let (x0, x1) = lm.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.0), a.1.max(p.0)));
                    let (y0, y1) = lm.iter().fold((f64::MAX, f64::MIN), |a, p| (a.0.min(p.1), a.1.max(p.1)));
                    ((x0 + x1) / 2.0, (y0 + y1) / 2.0, (x1 - x0) / 2.0, (y1 - y0) / 2.0)
                }
                None => (w as f64 / 2.0, h as f64 / 2.0, w as f64 * 0.3, h as f64 * 0.38),
            };
            let (ax, ay) = (ax * scale, ay * scale);
            Mask::from_fn(w, h, |x, y| {
                let dx = (x as f64 + 0.5 - cx) / ax;
                let dy = (y as f64 + 0.5 - cy) / ay;
                dx * dx + dy * dy <= 1.0
            })
        }
    }
}

/// Feathered blend weights in `[0, 1]`, one per pixel.
pub fn blend_weights(sample: &ImageSample, recipe: &BlendRecipe) -> Vec<f64> {
    let region = face_region(sample, recipe);
    let plane: Vec<f64> = region.as_slice().iter().map(|&b| b as u8 as f64).collect();
    filters::blur_plane(&plane, region.width(), region.height(), recipe.blend_feather)
}

/// Fraction of the image below which (or above `1 −` which) a forgery is rejected.
pub const MIN_MASK_FRACTION: f64 = 0.01;

/// Produces the self-blended counterpart of a real sample.
///
/// The fake's outer-face mask is `true` exactly where the feathered blend
/// weight is below 0.5.
pub fn self_blend(real: &ImageSample, recipe: &BlendRecipe, fake_id: usize) -> Result<ImageSample> {
    if real.label != Label::Real {
        return Err(KidError::InvalidArgument("self-blending needs a real source".into()));
    }
    let (w, h) = (real.pixels.width(), real.pixels.height());
    let weights = blend_weights(real, recipe);
    let manipulated = weights.iter().filter(|&&m| m >= 0.5).count();
    let fraction = manipulated as f64 / (w * h) as f64;
    if !(MIN_MASK_FRACTION..=1.0 - MIN_MASK_FRACTION).contains(&fraction) {
        return Err(KidError::DegenerateForgery(format!("blend mask covers {:.2}% of the image", fraction * 100.0)));
    }
    let source = apply_transforms(&real.pixels, &recipe.source_transforms);
    let mut pixels = real.pixels.clone();
    for (i, m) in weights.iter().enumerate() {
        for c in 0..3 {
            let k = i * 3 + c;
            pixels.as_mut_slice()[k] = (m * source.as_slice()[k] + (1.0 - m) * real.pixels.as_slice()[k]).clamp(0.0, 1.0);
        }
    }
    if pixels.as_slice().iter().zip(real.pixels.as_slice()).all(|(a, b)| (a - b).abs() < 1e-9) {
        return Err(KidError::DegenerateForgery("blended image is identical to its source".into()));
    }
    let outer_face_mask = Mask::from_fn(w, h, |x, y| weights[y * w + x] < 0.5);
    Ok(ImageSample {
        id: fake_id,
        pixels,
        label: Label::Fake,
        outer_face_mask,
        group_id: real.group_id.clone(),
        pair_id: Some(real.id),
        landmarks: real.landmarks.clone(),
    })
}

/// Self-blends with successive recipe seeds until one is non-degenerate.
pub fn self_blend_retrying(real: &ImageSample, seed: u64, fake_id: usize) -> Result<(ImageSample, BlendRecipe)> {
    let mut last = None;
    for attempt in 0..8u64 {
        let recipe = BlendRecipe::random(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        match self_blend(real, &recipe, fake_id) {
            Ok(f) => return Ok((f, recipe)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
