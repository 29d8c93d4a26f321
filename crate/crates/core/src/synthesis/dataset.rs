//! On-disk datasets: loading real frames with optional landmarks, group-wise
//! splits, and line-delimited manifests of synthesized samples.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ImageSample, Label};
use crate::error::{KidError, Result};
use crate::img::{Image, Mask};

/// Loads `<root>/real/<group>/<frame>.png`, resizing to `size × size` and
/// rescaling any `<frame>.landmarks.json` points to match.
pub fn load_real_frames(root: &Path, size: usize) -> Result<Vec<ImageSample>> {
    let real = root.join("real");
    let mut groups: Vec<PathBuf> = fs::read_dir(&real)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    groups.sort();
    let mut out = Vec::new();
    for group in groups {
        let gid = group.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut frames: Vec<PathBuf> = fs::read_dir(&group)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        frames.sort();
        for frame in frames {
            let (w0, h0) = image::image_dimensions(&frame)?;
            let pixels = Image::load(&frame, Some(size))?;
            let mut sample = ImageSample::real(out.len(), pixels);
            sample.group_id = Some(gid.clone());
            let lm_path = frame.with_extension("landmarks.json");
            if lm_path.exists() {
                let points: Vec<(f64, f64)> = serde_json::from_str(&fs::read_to_string(&lm_path)?)?;
                let (sx, sy) = (size as f64 / w0 as f64, size as f64 / h0 as f64);
                sample.landmarks = Some(points.into_iter().map(|(x, y)| (x * sx, y * sy)).collect());
            }
            out.push(sample);
        }
    }
    if out.is_empty() {
        return Err(KidError::InvalidArgument(format!("no frames under {}", real.display())));
    }
    Ok(out)
}

/// Splits by group so no source contributes to both sides. Samples without a
/// group id form singleton groups.
pub fn split_by_group(samples: Vec<ImageSample>, holdout_fraction: f64, seed: u64) -> (Vec<ImageSample>, Vec<ImageSample>) {
    let key = |s: &ImageSample| s.group_id.clone().unwrap_or_else(|| format!("#{}", s.id));
    let mut groups: Vec<String> = samples.iter().map(key).collect::<BTreeSet<_>>().into_iter().collect();
    groups.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_hold = (holdout_fraction * groups.len() as f64).round() as usize;
    if holdout_fraction > 0.0 && groups.len() > 1 {
        n_hold = n_hold.clamp(1, groups.len() - 1);
    }
    let held: BTreeSet<String> = groups.into_iter().take(n_hold).collect();
    samples.into_iter().partition(|s| !held.contains(&key(s)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Label,
    pub pair_id: Option<usize>,
    pub mask_path: Option<String>,
}

/// Writes images and fake masks under `dir` plus `dir/manifest.jsonl`.
pub fn write_manifest(samples: &[ImageSample], dir: &Path) -> Result<Vec<ManifestRecord>> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(samples.len());
    let mut w = BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?);
    for s in samples {
        let tag = match s.label {
            Label::Real => "real",
            Label::Fake => "fake",
        };
        let name = format!("{tag}_{:06}.png", s.id);
        s.pixels.save_png(&dir.join(&name))?;
        let mask_path = if s.label == Label::Fake {
            let m = format!("{tag}_{:06}.mask.png", s.id);
            s.outer_face_mask.save_png(&dir.join(&m))?;
            Some(m)
        } else {
            None
        };
        let rec = ManifestRecord { path: name, label: s.label, pair_id: s.pair_id, mask_path };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
        records.push(rec);
    }
    w.flush()?;
    Ok(records)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>> {
    let f = BufReader::new(fs::File::open(dir.join("manifest.jsonl"))?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Loads the samples listed in a manifest; reals get all-ones masks. Ids are
/// recovered from the `<label>_<id>.png` names so pair ids still resolve.
pub fn load_manifest_samples(dir: &Path) -> Result<Vec<ImageSample>> {
    read_manifest(dir)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let pixels = Image::load(&dir.join(&r.path), None)?;
            let id = r
                .path
                .trim_end_matches(".png")
                .rsplit('_')
                .next()
                .and_then(|n| n.parse().ok())
                .unwrap_or(i);
            let mut s = ImageSample::real(id, pixels);
            s.label = r.label;
            s.pair_id = r.pair_id;
            if let Some(m) = &r.mask_path {
                s.outer_face_mask = Mask::load(&dir.join(m))?;
            }
            Ok(s)
        })
        .collect()
}
