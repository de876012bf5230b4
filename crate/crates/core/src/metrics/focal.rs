use serde::{Deserialize, Serialize};

use super::{LabelMatrix, MetricsError};

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalLossParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalLossParams {
    fn default() -> Self {
        FocalLossParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// `-alpha * (1 - p_t)^gamma * ln(p_t)` where `p_t` is the probability
/// assigned to the true outcome.
pub fn focal_loss(prob: f64, label: bool, params: FocalLossParams) -> f64 {
    let prob = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let p_t = if label { prob } else { 1.0 - prob };
    -params.alpha * (1.0 - p_t).powf(params.gamma) * p_t.ln()
}

/// Mean focal loss over every (instance, label) cell.
pub fn focal_loss_batch(
    probs: &[Vec<f64>],
    y_true: &LabelMatrix,
    params: FocalLossParams,
) -> Result<f64, MetricsError> {
    let cols = probs.first().map_or(0, Vec::len);
    if probs.len() != y_true.rows() || probs.iter().any(|r| r.len() != y_true.cols()) {
        return Err(MetricsError::ShapeMismatch {
            expected: y_true.shape(),
            actual: (probs.len(), cols),
        });
    }
    if y_true.cells().is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let total: f64 = probs
        .iter()
        .enumerate()
        .flat_map(|(r, row)| row.iter().enumerate().map(move |(c, &p)| (r, c, p)))
        .map(|(r, c, p)| focal_loss(p, y_true.get(r, c), params))
        .sum();
    Ok(total / y_true.cells().len() as f64)
}
