//! Manifests, preprocessing, augmentation, cropping, page splitting and the
//! synthetic data harness.

pub mod augment;
pub mod crop;
pub mod manifest;
pub mod noise;
pub mod preprocess;
pub mod split;
pub mod synth;

use std::path::{Path, PathBuf};

use image::GrayImage;

pub use augment::{augment, AugmentConfig};
pub use crop::{crop_line_from_mask, CROP_PADDING};
pub use manifest::{load_gray, save_gray, LineSample, Manifest, ManifestStats, NoiseCategory, NoiseTruth, Split};
pub use noise::{inject_noise, NoiseRates, NoiseReport};
pub use preprocess::{compute_targets, median_value, prepare, resize_pad, PreprocessSpec};
pub use split::{apply_page_split, audit_split, page_texts, split_pages, LeakageAudit, PageSplit, PageText, SplitConfig};
pub use synth::{render_synthetic_line, synth_dataset, synthetic_alphabet, GlyphBank, RenderConfig, SynthConfig, SynthDataset};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("image has zero area")]
    ZeroArea,
    #[error("mask has no line pixels")]
    EmptyMask,
    #[error("codepoint {0:?} is not in the alphabet")]
    OutOfAlphabet(char),
    #[error("no image for sample {0:?}")]
    MissingImage(String),
    #[error("need {needed} isolated pages for val/test but only {available} exist; conflicts: {conflicts:?}")]
    InsufficientPages {
        needed: usize,
        available: usize,
        conflicts: Vec<String>,
    },
}

impl PipelineError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}

/// Where line images come from: disk for real manifests, memory for the
/// synthetic harness.
pub trait ImageSource {
    fn image(&self, sample: &LineSample) -> Result<GrayImage, PipelineError>;
}

impl ImageSource for Manifest {
    fn image(&self, sample: &LineSample) -> Result<GrayImage, PipelineError> {
        self.load_image(sample)
    }
}
