//! Stage 2: human verification of flagged samples, the verdict log, the
//! cleaned dataset and the category report.

mod clean;
mod report;
pub mod server;
mod session;
mod verdict;

pub use clean::{build_cleaned_manifest, CleanSummary, CleanedManifest};
pub use report::{ReviewReport, SplitTally};
pub use session::{FlaggedSample, ReviewSession, SampleBundle, SampleStatus, SessionMeta, SubmitOutcome};
pub use verdict::{Action, ErrorCategory, ImageFix, Verdict, VerdictRequest};

use crate::detector::DetectorError;
use crate::pipeline::PipelineError;

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    /// A verdict breaks a type invariant.
    #[error("invalid verdict: {0}")]
    Invalid(String),
    #[error("unknown {kind} {id:?}")]
    NotFound { kind: &'static str, id: String },
    #[error("{} flagged samples have no verdict: {}", .0.len(), .0.join(", "))]
    Pending(Vec<String>),
    #[error("verdict log line {line}: {message}")]
    CorruptLog { line: usize, message: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ReviewError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        ReviewError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }
}
