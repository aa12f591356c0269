//! Zero-shot domain adaptation from a handful of synthetic target-style images.
//!
//! The crate covers the numerical core of the method:
//!
//! - [`tensor`]: feature maps, channel statistics, AdaIN and seeded sampling.
//! - [`style_bank`]: per-domain style entries and auxiliary-domain selection.
//! - [`augment`]: Domain Mix and Patch Style Transfer.
//! - [`model`]: the frozen convolutional extractor and the per-pixel linear head.
//! - [`trainer`]: entropy-weighted cross entropy, SGD, source pretraining and adaptation.
//! - [`synth`]: the procedural benchmark that stands in for real and generated images.
//! - [`metrics`]: confusion matrices and mIoU.
//! - [`dataset`]: the on-disk PPM/PGM/CSV benchmark layout.
//! - [`format`]: little-endian binary helpers shared by the bank and checkpoint files.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod format;
pub mod metrics;
pub mod model;
pub mod style_bank;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use augment::{LambdaPolicy, MixParams, PatchRect, StylizedFeature};
pub use error::{FormatError, Result, SidaError};
pub use metrics::ConfusionMatrix;
pub use model::{ClassifierParams, FrozenExtractor, Image, LogitsMap, ProbMap};
pub use style_bank::{DomainId, StyleBank, StyleEntry};
pub use synth::{DomainKind, DomainTransform, LabelGrid, Role, ToySample};
pub use tensor::{FeatureMap, RandomSource, StyleStats, SIGMA_FLOOR};
pub use trainer::{EntropySource, OptimizerState, TrainConfig, WeightScope};

/// Label value skipped by the loss and the metrics.
pub const IGNORE_LABEL: u8 = 255;
