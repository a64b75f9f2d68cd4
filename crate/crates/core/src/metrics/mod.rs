//! Report-quality metrics and the statistics used to summarize them.

mod clinical;
mod nlg;
mod stats;

use thiserror::Error;

pub use clinical::{
    chexbert_similarity, radcliq, radgraph_f1, PathologyVector, RadCliqConfig, RadGraphF1,
    PATHOLOGY_COUNT,
};
pub use nlg::{bert_score, bleu2, bleu2_with, tokenize, BleuConfig, EmbeddingMatrix, TokenSequence};
pub use stats::{mean_ci, normal_cdf, z_test_proportion, MetricReport, ZTestResult, Z_95};

/// Metric column names, in table order.
pub const RADCLIQ: &str = "radcliq";
pub const RADGRAPH_F1: &str = "radgraph_f1";
pub const CHEXBERT: &str = "chexbert";
pub const BLEU2: &str = "bleu2";
pub const BERTSCORE: &str = "bertscore";

pub const METRIC_COLUMNS: [&str; 5] = [RADCLIQ, RADGRAPH_F1, CHEXBERT, BLEU2, BERTSCORE];

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: missing component {0:?}")]
    MissingComponent(String),
}
