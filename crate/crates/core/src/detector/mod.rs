//! Stage 1: train to the convergence epoch, score every sample by CER, rank,
//! and flag samples above the review threshold.

mod early_stop;
mod report;
mod score;
mod train;

pub use early_stop::{run_with_early_stopping, EarlyStopping, EpochRecord, EpochRunner, Observation, StopSummary};
pub use report::{read_score_report, write_score_report, ScoreRecord};
pub use score::{
    evaluate_mean_cer, precision_at_k, rank_scores, score_samples, select_flagged, FlagSet, PrecisionAtK,
    SampleScore, ScoreFailure, Scoring, DEFAULT_TAU,
};
pub use train::{prepare_sample, train_with_early_stopping, TrainingOutcome, TrainingSetup};

use crate::pipeline::{PipelineError, Split};
use crate::recognizer::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum DetectorError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the {0} split is empty")]
    EmptySplit(Split),
    #[error("epoch {epoch}: training diverged ({source})")]
    Diverged {
        epoch: usize,
        #[source]
        source: ModelError,
    },
    #[error("{0}")]
    Invalid(String),
}
