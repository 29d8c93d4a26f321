//! Glue shared by the command-line tool and the acceptance suite: where runs
//! live on disk, where source images come from, and the held-out test set.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use sha2::{Digest, Sha256};

use crate::backbone::Model;
use crate::checkpoint::Checkpoint;
use crate::config::ConfigFile;
use crate::error::{KidError, Result};
use crate::pretrain::pretrained_model;
use crate::synthesis::dataset::{load_manifest_samples, load_real_frames};
use crate::synthesis::{toy_face_dataset, ImageSample};
use crate::training::synthesize_pairs;

/// Stream offset separating procedural test faces from training faces.
const TEST_FACE_STREAM: u64 = 0x7E57_0000_0000;
/// First sample id of synthesized test fakes.
const TEST_FAKE_ID: usize = 1 << 40;

/// `<output_dir>/<config hash>-s<seed>`.
pub fn run_dir(file: &ConfigFile) -> PathBuf {
    Path::new(&file.output_dir).join(format!("{}-s{}", file.hash(), file.seed))
}

/// Cache location of the pretrained backbone a configuration asks for.
pub fn pretrained_path(file: &ConfigFile) -> Option<PathBuf> {
    let pre = file.pretraining()?;
    let key = format!("{:?}{:?}", file.backbone(), pre);
    let digest: String = Sha256::digest(key.as_bytes()).iter().take(6).map(|b| format!("{b:02x}")).collect();
    Some(Path::new(&file.output_dir).join("pretrained").join(format!("{digest}.kid")))
}

/// Starting weights of a run: a given checkpoint, a (cached) pretrained
/// backbone, or a random initialization. Injection weights start at zero.
pub fn initial_model(file: &ConfigFile, on_pretrain: impl FnOnce(&[f64])) -> Result<Model> {
    let backbone = file.backbone();
    let mut model = if let Some(path) = &file.backbone_checkpoint {
        Checkpoint::load(Path::new(path), Some(&backbone))?.model
    } else if let (Some(pre), Some(cache)) = (file.pretraining(), pretrained_path(file)) {
        if cache.exists() {
            Checkpoint::load(&cache, Some(&backbone))?.model
        } else {
            let (model, history) = pretrained_model(&backbone, &pre)?;
            on_pretrain(&history);
            if let Some(parent) = cache.parent() {
                std::fs::create_dir_all(parent)?;
            }
            Checkpoint { model: model.clone(), optimizer: None, epoch: 0, step: 0 }.save(&cache)?;
            model
        }
    } else {
        Model::new(backbone, file.seed)?
    };
    model.zero_injection();
    Ok(model)
}

/// Real training sources: frames under `dataset_dir/real/`, or procedural faces.
pub fn source_images(file: &ConfigFile) -> Result<Vec<ImageSample>> {
    match &file.dataset_dir {
        Some(dir) => load_real_frames(Path::new(dir), file.image_size),
        None => Ok(toy_face_dataset(file.dataset_size, file.image_size, file.seed)),
    }
}

/// Fresh procedural faces that never feed training, for any seed.
pub fn procedural_test_faces(n: usize, image_size: usize, seed: u64) -> Vec<ImageSample> {
    let mut faces = toy_face_dataset(n, image_size, seed ^ TEST_FACE_STREAM);
    for (i, f) in faces.iter_mut().enumerate() {
        f.id = TEST_FAKE_ID / 2 + i;
        f.group_id = Some(format!("test{i:05}"));
    }
    faces
}

/// Held-out evaluation samples, reals interleaved with their fakes.
///
/// With a dataset directory the manifest under `dataset_dir/test/` is used when
/// present; procedural runs draw `test_size` unseen faces.
pub fn test_samples(file: &ConfigFile) -> Result<Vec<ImageSample>> {
    if let Some(dir) = &file.dataset_dir {
        let test_dir = Path::new(dir).join("test");
        if test_dir.join("manifest.jsonl").exists() {
            return load_manifest_samples(&test_dir);
        }
        return Err(KidError::InvalidArgument(format!(
            "no test manifest at {}; run `synthesize` on held-out frames first",
            test_dir.display()
        )));
    }
    let reals = procedural_test_faces(file.test_size, file.image_size, file.seed);
    let pairs = synthesize_pairs(&reals, file.seed ^ TEST_FACE_STREAM, TEST_FAKE_ID)?;
    Ok(pairs.into_iter().flat_map(|(r, f)| [r, f]).collect())
}

/// Appends one JSON object per line.
pub struct JsonlWriter {
    out: BufWriter<File>,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}
