//! Knowledge-injected vision-transformer deepfake detection at desk scale.
//!
//! The backbone is a small pre-norm ViT whose attention layers carry a parallel
//! trainable correlation pathway ([`attention`]), a patch-level localization
//! branch ([`localization`]) and activation regularizers ([`regularization`]).
//! [`synthesis`] produces self-blended training pairs, [`training`] runs the
//! optimization and [`eval`] holds metrics and diagnostic exports.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod img;
pub mod localization;
pub mod optimizer;
pub mod params;
pub mod pretrain;
pub mod regularization;
pub mod synthesis;
pub mod tensor;
pub mod training;
pub mod workflow;

pub use backbone::{AttentionMode, ForwardOutput, Model};
pub use checkpoint::Checkpoint;
pub use config::{BackboneConfig, ConfigFile, RegularizerConfig, TrainingConfig};
pub use error::{KidError, Result};
pub use img::{Image, Mask};
pub use localization::PatchLabelMap;
pub use params::{ParameterPartition, TrainMode};
pub use synthesis::{ImageSample, Label};
pub use tensor::Mat;
pub use training::{train, EpochRecord, LossBreakdown, TrainOutcome, Trainer};
