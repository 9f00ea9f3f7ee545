//! Experiment orchestration: splits, tuning, per-context evaluation, and the
//! agreement and stability analyses over QPP system rankings.

mod config;
mod evaluate;
mod experiment;
mod splits;
mod tables;

pub use config::{ExperimentConfig, RawConfig};
pub use evaluate::{
    evaluate_context, evaluate_subset, tune, ContextOutcome, EvalContext, Evaluator, ScoreTable, Target, TuneResult,
};
pub use experiment::{
    analysis_contexts, build_score_table, compute_system_values, run_experiment, run_on_workbench, write_reports,
    ContextKey, Report, TuningRecord, Workbench,
};
pub use splits::{make_splits, Split, SplitPlan};
pub use tables::{
    agreement_table, format_agreement, format_stability, format_system_values, parse_system_values, stability_matrix,
    AgreementRow, AgreementTable, StabilityAxis, StabilityMatrix, SystemRanking, SystemValue, SystemValues,
};

use thiserror::Error;

use crate::apae::ApaeError;
use crate::corpus::CorpusError;
use crate::listwise::ListwiseError;
use crate::metrics::MetricsError;
use crate::qpp::QppError;
use crate::retrieval::RetrievalError;

/// Errors carry the pipeline stage they occurred in.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[corpus] {0}")]
    Corpus(#[from] CorpusError),
    #[error("[retrieval] {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("[metrics] {0}")]
    Metrics(#[from] MetricsError),
    #[error("[qpp] {0}")]
    Qpp(#[from] QppError),
    #[error("[split] {0}")]
    Split(String),
    #[error("[evaluate] {0}")]
    Evaluate(String),
    #[error("[report] {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<ListwiseError> for HarnessError {
    fn from(e: ListwiseError) -> Self {
        HarnessError::Evaluate(e.to_string())
    }
}

impl From<ApaeError> for HarnessError {
    fn from(e: ApaeError) -> Self {
        HarnessError::Evaluate(e.to_string())
    }
}
