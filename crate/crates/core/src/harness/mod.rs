//! Experiment orchestration: dataset loading, the serialization-to-report
//! and end-to-end sweeps, result tables and the blinded style evaluation.

pub mod annotations;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod scoring;
pub mod style_eval;
pub mod table;

use thiserror::Error;

use crate::metrics::MetricError;

pub use annotations::{AnnotationStore, TextAnnotation};
pub use config::{evaluate, EvaluateOutput, HarnessConfig, Mode, TransportKind};
pub use dataset::{load_dataset, parse_dataset, SerializationSource, Split, StudyRecord};
pub use experiment::{run_end_to_end, run_serialization_to_report, ExperimentConfig, ExperimentRun, ItemRecord};
pub use scoring::{MetricsConfig, Scorer};
pub use style_eval::{assemble_style_eval_sets, score_style_eval, CandidateReport, StyleEvalScore, StyleEvalSet};
pub use table::{parse_table_csv, render_table, Experiment, ResultRow, ResultTable, TableFormat};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
