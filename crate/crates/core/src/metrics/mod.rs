//! Backend-free evaluation measures.

mod classification;
mod focal;
mod interval;
mod rouge;

use thiserror::Error;

pub use classification::{
    hamming_loss, macro_f1, mcc_from_counts, mcc_multilabel, per_label_f1, weighted_f1,
    LabelMatrix, LabelScore,
};
pub use focal::{focal_loss, focal_loss_batch, FocalLossParams, PROB_EPS};
pub use interval::{
    regularized_incomplete_beta, student_t_cdf, student_t_quantile, summarize,
    t_confidence_interval, MetricSummary, DEFAULT_LEVEL,
};
pub use rouge::{rouge1, tokenize, RougeScore};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("total support is zero")]
    ZeroSupport,
    #[error("metric needs a non-empty input")]
    EmptyInput,
    #[error("confidence interval needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
}
