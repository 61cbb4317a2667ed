//! Metrics, reports and ablations over assessment scores.

mod ablation;
mod metrics;
mod report;

use thiserror::Error;

use crate::inference::InferenceError;
use crate::ingest::Label;

pub use ablation::{ablation_run, AblationAxis, AblationRow, ablation_csv};
pub use metrics::{
    confusion_at, histogram, roc_auc, roc_points, score_distribution, trapezoid_area, ClassStats, Confusion,
    HistogramBin, ScoreDistribution,
};
pub use report::{evaluate, evaluate_scores, histogram_svg, write_report_dir, EvalReport, ReportHeader, ScoredSample};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {index} is NaN")]
    NanScore { index: usize },
    #[error("ROC AUC needs both classes (positives={n_pos}, negatives={n_neg})")]
    SingleClass { n_pos: usize, n_neg: usize },
    #[error("no scores to evaluate")]
    Empty,
    #[error("no {0:?} samples to summarise")]
    EmptyClass(Label),
    #[error("assessed sample {0:?} is not in the manifest")]
    UnknownSample(String),
    #[error("{path}: I/O failure: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;
