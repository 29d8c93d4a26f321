//! Training-data factory: self-blended forgeries, augmentation, degradations
//! and a procedural face generator.

pub mod augment;
pub mod blend;
pub mod dataset;
pub mod degrade;
pub mod face;
pub mod filters;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::img::{Image, Mask};

pub use augment::{augment, AugmentOp};
pub use blend::{self_blend, self_blend_retrying, BlendRecipe, MaskShape, SourceTransform};
pub use degrade::{degrade, DegradationKind, MAX_SEVERITY};
pub use face::{draw_face, draw_face_with_attributes, toy_face_dataset, DrawnFace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Real = 0,
    Fake = 1,
}

impl Label {
    pub fn class_index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: usize,
    pub pixels: Image,
    pub label: Label,
    /// `true` marks unmanipulated pixels.
    pub outer_face_mask: Mask,
    pub group_id: Option<String>,
    /// For fakes, the id of the real sample they were blended from.
    pub pair_id: Option<usize>,
    pub landmarks: Option<Vec<(f64, f64)>>,
}

impl ImageSample {
    pub fn real(id: usize, pixels: Image) -> Self {
        let outer_face_mask = Mask::filled(pixels.width(), pixels.height(), true);
        Self { id, pixels, label: Label::Real, outer_face_mask, group_id: None, pair_id: None, landmarks: None }
    }
}

/// Independent stream for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
