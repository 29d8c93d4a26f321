//! Procedural face-like images with synthetic landmarks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{sample_rng, ImageSample};
use crate::img::Image;

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Coverage in `[0, 1]` of an axis-aligned ellipse with a one-pixel soft edge.
fn ellipse_coverage(x: f64, y: f64, cx: f64, cy: f64, ax: f64, ay: f64) -> f64 {
    let d = (((x - cx) / ax).powi(2) + ((y - cy) / ay).powi(2)).sqrt();
    let edge = 1.0 / ax.min(ay).max(1e-6);
    1.0 - smoothstep(1.0 - edge, 1.0 + edge, d)
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)]
}

/// One drawn face with the generator parameters behind it.
#[derive(Debug, Clone)]
pub struct DrawnFace {
    pub image: Image,
    /// Jaw contour plus brows, eyes, nose tip and mouth corners, in pixels.
    pub landmarks: Vec<(f64, f64)>,
    /// Colors, lighting and geometry (as fractions of the image size).
    pub attributes: Vec<f64>,
}

/// Draws one face; see [`draw_face_with_attributes`].
pub fn draw_face(size: usize, rng: &mut ChaCha8Rng) -> (Image, Vec<(f64, f64)>) {
    let f = draw_face_with_attributes(size, rng);
    (f.image, f.landmarks)
}

pub fn draw_face_with_attributes(size: usize, rng: &mut ChaCha8Rng) -> DrawnFace {
    let s = size as f64;
    let bg_a = random_color(rng);
    let bg_b = random_color(rng);
    let bg_angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let stripe_freq: f64 = rng.gen_range(0.0..0.6);
    let stripe_amp: f64 = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.15) } else { 0.0 };

    let cx = s / 2.0 + rng.gen_range(-0.05..0.05) * s;
    let cy = s / 2.0 + rng.gen_range(-0.04..0.06) * s;
    let ax = rng.gen_range(0.27..0.34) * s;
    let ay = rng.gen_range(0.35..0.42) * s;
    let skin_base = rng.gen_range(0.35..0.95);
    let skin = [skin_base, skin_base * rng.gen_range(0.7..0.85), skin_base * rng.gen_range(0.5..0.7)];
    let light: f64 = rng.gen_range(-0.15..0.15);
    let hair = [rng.gen_range(0.0..0.4), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.25)];
    let hair_line = cy - ay * rng.gen_range(0.45..0.7);
    let eye_dx = ax * rng.gen_range(0.35..0.45);
    let eye_y = cy - ay * rng.gen_range(0.12..0.25);
    let eye_r = s * rng.gen_range(0.035..0.055);
    let iris = [rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.35)];
    let brow_y = eye_y - eye_r * 2.2;
    let mouth_y = cy + ay * rng.gen_range(0.4..0.55);
    let mouth_w = ax * rng.gen_range(0.3..0.5);
    let mouth_h = s * rng.gen_range(0.02..0.04);
    let lips = [rng.gen_range(0.5..0.85), rng.gen_range(0.1..0.3), rng.gen_range(0.15..0.35)];
    let nose_y = (eye_y + mouth_y) / 2.0;
    let noise_sigma = rng.gen_range(0.005..0.02);
    let noise = Normal::new(0.0, noise_sigma).expect("positive sigma");

    let mut img = Image::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let t = ((fx / s - 0.5) * bg_angle.cos() + (fy / s - 0.5) * bg_angle.sin() + 0.5).clamp(0.0, 1.0);
        let mut px = mix(bg_a, bg_b, t);
        let stripe = stripe_amp * (fx * stripe_freq * std::f64::consts::PI).sin();
        px = px.map(|v| v + stripe);

        let face = ellipse_coverage(fx, fy, cx, cy, ax, ay);
        let shade = 1.0 + light * (fx - cx) / ax;
        let mut f = skin.map(|v| v * shade);
        let hair_t = smoothstep(hair_line + 1.0, hair_line - 1.0, fy);
        f = mix(f, hair, hair_t);
        for side in [-1.0, 1.0] {
            let ex = cx + side * eye_dx;
            f = mix(f, [0.95, 0.95, 0.92], ellipse_coverage(fx, fy, ex, eye_y, eye_r * 1.6, eye_r));
            f = mix(f, iris, ellipse_coverage(fx, fy, ex, eye_y, eye_r * 0.8, eye_r * 0.8));
            f = mix(f, hair, 0.8 * ellipse_coverage(fx, fy, ex, brow_y, eye_r * 1.8, eye_r * 0.4));
        }
        f = mix(f, skin.map(|v| v * 0.75), 0.7 * ellipse_coverage(fx, fy, cx, nose_y, eye_r * 0.5, eye_r * 1.2));
        f = mix(f, lips, ellipse_coverage(fx, fy, cx, mouth_y, mouth_w, mouth_h));
        mix(px, f, face)
    });
    for v in img.as_mut_slice() {
        *v += noise.sample(rng);
    }
    img.clamp01();

    let mut landmarks = Vec::new();
    // jaw contour from one temple, under the chin, to the other
    for i in 0..=10 {
        let theta = std::f64::consts::PI * (1.0 - i as f64 / 10.0);
        let r = 0.88;
        let y = cy - ay * 0.15 + ay * r * theta.sin() * 1.1;
        landmarks.push((cx - ax * r * theta.cos(), y.min(cy + ay * 0.92)));
    }
    for side in [-1.0, 1.0] {
        landmarks.push((cx + side * eye_dx, brow_y));
        landmarks.push((cx + side * (eye_dx + eye_r * 1.8), brow_y));
        landmarks.push((cx + side * eye_dx, eye_y));
        landmarks.push((cx + side * mouth_w, mouth_y));
    }
    landmarks.push((cx, nose_y));
    let mut attributes = Vec::with_capacity(32);
    attributes.extend(bg_a);
    attributes.extend(bg_b);
    attributes.extend(skin);
    attributes.extend(hair);
    attributes.extend(iris);
    attributes.extend(lips);
    attributes.push(light);
    attributes.extend([cx, cy, ax, ay, hair_line, eye_dx, eye_y, eye_r, mouth_y, mouth_w].map(|v| v / s));
    DrawnFace { image: img, landmarks, attributes }
}

/// `n` real samples with all-ones masks, replayable from `seed`.
pub fn toy_face_dataset(n: usize, size: usize, seed: u64) -> Vec<ImageSample> {
    (0..n)
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            let (pixels, landmarks) = draw_face(size, &mut rng);
            let mut s = ImageSample::real(i, pixels);
            s.group_id = Some(format!("face{i:05}"));
            s.landmarks = Some(landmarks);
            s
        })
        .collect()
}
