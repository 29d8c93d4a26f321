//! Photometric and blur primitives shared by augmentation, blending and degradation.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;

use crate::error::Result;
use crate::img::Image;

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

/// Shifts hue by `hue_shift` turns and scales saturation.
pub fn hue_saturation(img: &Image, hue_shift: f64, saturation_scale: f64) -> Image {
    Image::from_fn(img.width(), img.height(), |x, y| {
        let [h, s, v] = rgb_to_hsv(img.get(x, y));
        hsv_to_rgb([h + hue_shift, (s * saturation_scale).clamp(0.0, 1.0), v])
    })
}

/// `(v − 0.5)·contrast + 0.5 + brightness`, clamped.
pub fn brightness_contrast(img: &Image, brightness: f64, contrast: f64) -> Image {
    let mut out = img.clone();
    for v in out.as_mut_slice() {
        *v = ((*v - 0.5) * contrast + 0.5 + brightness).clamp(0.0, 1.0);
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur of a single-channel `width × height` plane, edges clamped.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] =
                k.iter().enumerate().map(|(i, w)| w * plane[y * width + clamp(x as isize + i as isize - r, width)]).sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] =
                k.iter().enumerate().map(|(i, w)| w * tmp[clamp(y as isize + i as isize - r, height) * width + x]).sum();
        }
    }
    out
}

pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for ch in 0..3 {
        let plane: Vec<f64> = img.as_slice().iter().skip(ch).step_by(3).copied().collect();
        let blurred = blur_plane(&plane, w, h, sigma);
        for (i, v) in blurred.into_iter().enumerate() {
            out.as_mut_slice()[i * 3 + ch] = v;
        }
    }
    out
}

/// Unsharp mask: `img + amount·(img − blur(img))`.
pub fn sharpen(img: &Image, amount: f64) -> Image {
    let blurred = gaussian_blur(img, 1.0);
    let mut out = img.clone();
    for (o, b) in out.as_mut_slice().iter_mut().zip(blurred.as_slice()) {
        *o = (*o + amount * (*o - b)).clamp(0.0, 1.0);
    }
    out
}

pub fn jpeg_encode(img: &Image, quality: u8) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let rgb = img.to_rgb8();
    JpegEncoder::new_with_quality(Cursor::new(&mut bytes), quality.clamp(1, 100)).encode_image(&rgb)?;
    Ok(bytes)
}

/// Encodes at `quality` and decodes again.
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image> {
    let bytes = jpeg_encode(img, quality)?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)?.to_rgb8();
    Ok(Image::from_rgb8(&decoded))
}

/// Resamples `img` under the inverse map of a zoom about the center followed by a shift.
pub fn affine(img: &Image, dx: f64, dy: f64, zoom: f64) -> Image {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    Image::from_fn(img.width(), img.height(), |x, y| {
        let sx = (x as f64 - dx * w - cx) / zoom + cx;
        let sy = (y as f64 - dy * h - cy) / zoom + cy;
        img.sample(sx, sy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_roundtrip() {
        for rgb in [[0.2, 0.4, 0.6], [0.9, 0.1, 0.1], [0.5, 0.5, 0.5], [0.0, 0.0, 0.0], [0.3, 0.8, 0.2]] {
            let back = hsv_to_rgb(rgb_to_hsv(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-12, "{rgb:?} -> {back:?}");
            }
        }
    }

    #[test]
    fn blur_preserves_constant_images() {
        let img = Image::filled(9, 7, [0.3, 0.6, 0.9]);
        let b = gaussian_blur(&img, 1.5);
        assert!(b.as_slice().iter().zip(img.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn identity_affine_is_identity() {
        let img = Image::from_fn(8, 8, |x, y| [x as f64 / 8.0, y as f64 / 8.0, 0.5]);
        assert!(affine(&img, 0.0, 0.0, 1.0).mse(&img) < 1e-24);
    }
}
