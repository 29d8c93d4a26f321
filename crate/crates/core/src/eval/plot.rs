//! Minimal raster plots: heatmaps, line charts and scatter plots as PNG.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::Result;
use crate::tensor::Mat;

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [140, 86, 75]];

/// Dark blue through teal to yellow.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let stops = [[68.0, 1.0, 84.0], [59.0, 82.0, 139.0], [33.0, 145.0, 140.0], [94.0, 201.0, 98.0], [253.0, 231.0, 37.0]];
    let x = t * (stops.len() - 1) as f64;
    let i = (x.floor() as usize).min(stops.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (stops[i][k] + (stops[i + 1][k] - stops[i][k]) * f).round() as u8;
    [c(0), c(1), c(2)]
}

/// Per-image min-max normalization; a constant matrix maps to zeros.
pub fn min_max(values: &Mat) -> Mat {
    let lo = values.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values.map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
}

/// Writes `values` as a min-max normalized heatmap, each cell `scale` pixels wide.
pub fn heatmap_png(values: &Mat, scale: usize, path: &Path) -> Result<()> {
    let norm = min_max(values);
    let scale = scale.max(1);
    let img = RgbImage::from_fn((values.cols() * scale) as u32, (values.rows() * scale) as u32, |x, y| {
        Rgb(colormap(norm[(y as usize / scale, x as usize / scale)]))
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

struct Canvas {
    img: RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
    margin: u32,
}

impl Canvas {
    fn new(width: u32, height: u32, points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let widen = |a: f64, b: f64| if !a.is_finite() { (0.0, 1.0) } else if b > a { (a, b) } else { (a - 0.5, b + 0.5) };
        let mut c = Self {
            img: RgbImage::from_pixel(width, height, Rgb([255, 255, 255])),
            x_range: widen(x0, x1),
            y_range: widen(y0, y1),
            margin: 20,
        };
        c.axes();
        c
    }

    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let (w, h, m) = (self.img.width() as f64, self.img.height() as f64, self.margin as f64);
        let fx = (x - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        let fy = (y - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        ((m + fx * (w - 2.0 * m)).round() as i64, (h - m - fy * (h - 2.0 * m)).round() as i64)
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, Rgb(c));
        }
    }

    fn line(&mut self, (mut x0, mut y0): (i64, i64), (x1, y1): (i64, i64), c: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn axes(&mut self) {
        let (w, h, m) = (self.img.width() as i64, self.img.height() as i64, self.margin as i64);
        self.line((m, h - m), (w - m, h - m), [0, 0, 0]);
        self.line((m, m), (m, h - m), [0, 0, 0]);
    }

    fn dot(&mut self, (x, y): (i64, i64), c: [u8; 3]) {
        for dy in -2..=2 {
            for dx in -2..=2 {
                if dx * dx + dy * dy <= 4 {
                    self.put(x + dx, y + dy, c);
                }
            }
        }
    }
}

/// One polyline per series, colored by series index.
pub fn line_plot(series: &[Vec<(f64, f64)>], path: &Path) -> Result<()> {
    let mut c = Canvas::new(480, 320, series.iter().flatten().copied());
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<_> = s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| c.to_px(x, y)).collect();
        for w in pts.windows(2) {
            c.line(w[0], w[1], color);
        }
        for &p in &pts {
            c.dot(p, color);
        }
    }
    c.img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Points colored by class index.
pub fn scatter_plot(points: &[(f64, f64, usize)], path: &Path) -> Result<()> {
    let mut c = Canvas::new(480, 480, points.iter().map(|p| (p.0, p.1)));
    for &(x, y, class) in points {
        let p = c.to_px(x, y);
        c.dot(p, PALETTE[class % PALETTE.len()]);
    }
    c.img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
