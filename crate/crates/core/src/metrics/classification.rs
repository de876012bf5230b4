//! Multi-label classification metrics over binary indicator matrices.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::corpus::{LabelSet, NUM_LABELS};

/// Row-major binary indicator matrix: one row per instance, one column per
/// label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMatrix {
            rows,
            cols,
            cells: vec![false; rows * cols],
        }
    }

    /// Builds a matrix from rows of 0/1 values. All rows must share a length.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, MetricsError> {
        let cols = rows.first().map_or(NUM_LABELS, |r| r.as_ref().len());
        let mut cells = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(MetricsError::ShapeMismatch {
                    expected: (rows.len(), cols),
                    actual: (i, row.len()),
                });
            }
            cells.extend(row.iter().map(|&v| v != 0));
        }
        Ok(LabelMatrix {
            rows: rows.len(),
            cols,
            cells,
        })
    }

    /// One row per label set, 14 columns.
    pub fn from_label_sets<'a>(sets: impl IntoIterator<Item = &'a LabelSet>) -> Self {
        let mut matrix = LabelMatrix::zeros(0, NUM_LABELS);
        for set in sets {
            let start = matrix.cells.len();
            matrix.cells.resize(start + NUM_LABELS, false);
            for label in set {
                matrix.cells[start + label.index()] = true;
            }
            matrix.rows += 1;
        }
        matrix
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.cols + col] = value;
    }

    pub fn complement(&self) -> Self {
        LabelMatrix {
            cells: self.cells.iter().map(|c| !c).collect(),
            ..self.clone()
        }
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }
}

fn check_shapes(y_true: &LabelMatrix, y_pred: &LabelMatrix) -> Result<(), MetricsError> {
    if y_true.shape() != y_pred.shape() {
        return Err(MetricsError::ShapeMismatch {
            expected: y_true.shape(),
            actual: y_pred.shape(),
        });
    }
    Ok(())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Binary precision/recall/F1 per column. Empty denominators give 0.
pub fn per_label_f1(
    y_true: &LabelMatrix,
    y_pred: &LabelMatrix,
) -> Result<Vec<LabelScore>, MetricsError> {
    check_shapes(y_true, y_pred)?;
    let scores = (0..y_true.cols())
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for r in 0..y_true.rows() {
                match (y_true.get(r, c), y_pred.get(r, c)) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let precision = ratio(tp as f64, (tp + fp) as f64);
            let recall = ratio(tp as f64, (tp + fn_) as f64);
            LabelScore {
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
                support: tp + fn_,
            }
        })
        .collect();
    Ok(scores)
}

/// Unweighted mean of per-label F1, every label counted.
pub fn macro_f1(per_label: &[LabelScore]) -> f64 {
    if per_label.is_empty() {
        return 0.0;
    }
    per_label.iter().map(|s| s.f1).sum::<f64>() / per_label.len() as f64
}

/// Support-weighted mean of per-label F1.
pub fn weighted_f1(per_label: &[LabelScore]) -> Result<f64, MetricsError> {
    let total: usize = per_label.iter().map(|s| s.support).sum();
    if total == 0 {
        return Err(MetricsError::ZeroSupport);
    }
    Ok(per_label
        .iter()
        .map(|s| s.support as f64 / total as f64 * s.f1)
        .sum())
}

/// Fraction of label cells where prediction and truth disagree.
pub fn hamming_loss(y_true: &LabelMatrix, y_pred: &LabelMatrix) -> Result<f64, MetricsError> {
    check_shapes(y_true, y_pred)?;
    if y_true.cells().is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let wrong = y_true
        .cells()
        .iter()
        .zip(y_pred.cells())
        .filter(|(t, p)| t != p)
        .count();
    Ok(wrong as f64 / y_true.cells().len() as f64)
}

/// Matthews correlation over the flattened indicator cells. A zero factor
/// in the denominator yields 0.
pub fn mcc_multilabel(y_true: &LabelMatrix, y_pred: &LabelMatrix) -> Result<f64, MetricsError> {
    check_shapes(y_true, y_pred)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0f64, 0f64, 0f64, 0f64);
    for (&t, &p) in y_true.cells().iter().zip(y_pred.cells()) {
        match (t, p) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fn_ += 1.0,
        }
    }
    Ok(mcc_from_counts(tp, tn, fp, fn_))
}

pub fn mcc_from_counts(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}
