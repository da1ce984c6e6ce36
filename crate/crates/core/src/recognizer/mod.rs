//! Convolutional-recurrent line recognizer trained with CTC.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelConfig, TrainConfig};
pub use model::{Crnn, ImageTensor, StepLoss, Trainer, TrainingExample};

use crate::ctc::CtcError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape (C,H,W) = {got:?} does not match the model's {expected:?}")]
    InputShape {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("sample {sample_id}: transcript needs {required} frames but the model emits {frames}")]
    InfeasibleTarget {
        sample_id: String,
        required: usize,
        frames: usize,
    },
    #[error("sample {sample_id}: codepoint {codepoint:?} is not in the alphabet")]
    OutOfAlphabet { sample_id: String, codepoint: char },
    #[error("loss became non-finite ({0})")]
    NonFiniteLoss(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Ctc(#[from] CtcError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
