//! Global alignment of predicted clauses against reference clauses.
//!
//! Needleman-Wunsch over clause sequences: a diagonal step pairs reference
//! clause `i` with predicted clause `j` and earns their similarity, a
//! vertical or horizontal step leaves one clause unmatched and pays the gap
//! penalty. Pairs that survive the alignment are then filtered by a strict
//! similarity threshold before any expensive metric is computed on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::rouge1;

pub const DEFAULT_GAP_PENALTY: f64 = -0.25;
pub const DEFAULT_FILTER_THRESHOLD: f64 = 0.7;

#[derive(Debug, Error, PartialEq)]
pub enum AlignmentError {
    #[error("gap penalty must be <= 0, got {0}")]
    PositiveGapPenalty(f64),
    #[error("threshold must lie in [0, 1], got {0}")]
    ThresholdOutOfRange(f64),
}

/// Pairwise clause similarity used inside the alignment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    /// ROUGE-1 F1 between the two token bags.
    #[default]
    Rouge1F1,
}

impl Scorer {
    pub fn score(self, a: &str, b: &str) -> f64 {
        match self {
            Scorer::Rouge1F1 => clause_similarity(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub gap_penalty: f64,
    pub filter_threshold: f64,
    pub scorer: Scorer,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            gap_penalty: DEFAULT_GAP_PENALTY,
            filter_threshold: DEFAULT_FILTER_THRESHOLD,
            scorer: Scorer::default(),
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<(), AlignmentError> {
        if self.gap_penalty.is_nan() || self.gap_penalty > 0.0 {
            return Err(AlignmentError::PositiveGapPenalty(self.gap_penalty));
        }
        if !(0.0..=1.0).contains(&self.filter_threshold) {
            return Err(AlignmentError::ThresholdOutOfRange(self.filter_threshold));
        }
        Ok(())
    }
}

/// ROUGE-1 F1 of the two texts; two token-less texts score 0.
pub fn clause_similarity(a: &str, b: &str) -> f64 {
    let score = rouge1(a, b);
    if crate::metrics::tokenize(a).is_empty() && crate::metrics::tokenize(b).is_empty() {
        0.0
    } else {
        score.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub ref_index: usize,
    pub pred_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub pairs: Vec<AlignedPair>,
    pub ref_gaps: Vec<usize>,
    pub pred_gaps: Vec<usize>,
    pub total_score: f64,
    pub n_ref: usize,
    pub n_pred: usize,
}

impl Alignment {
    /// Mean similarity of the aligned pairs, `None` when nothing aligned.
    pub fn mean_pair_score(&self) -> Option<f64> {
        (!self.pairs.is_empty())
            .then(|| self.pairs.iter().map(|p| p.score).sum::<f64>() / self.pairs.len() as f64)
    }
}

/// Aligns `preds` against `refs` using the configured scorer.
pub fn needleman_wunsch<R, P>(
    refs: &[R],
    preds: &[P],
    cfg: &AlignmentConfig,
) -> Result<Alignment, AlignmentError>
where
    R: AsRef<str>,
    P: AsRef<str>,
{
    cfg.validate()?;
    let scores: Vec<Vec<f64>> = refs
        .iter()
        .map(|r| {
            preds
                .iter()
                .map(|p| cfg.scorer.score(r.as_ref(), p.as_ref()))
                .collect()
        })
        .collect();
    Ok(align_scores(&scores, preds.len(), cfg.gap_penalty))
}

/// DP table of size `(n_ref + 1) × (n_pred + 1)` for a precomputed
/// similarity matrix `scores[ref][pred]`.
pub fn fill_table(scores: &[Vec<f64>], n_pred: usize, gap: f64) -> Vec<Vec<f64>> {
    let n_ref = scores.len();
    let mut table = vec![vec![0.0; n_pred + 1]; n_ref + 1];
    for i in 1..=n_ref {
        table[i][0] = table[i - 1][0] + gap;
    }
    for j in 1..=n_pred {
        table[0][j] = table[0][j - 1] + gap;
    }
    for i in 1..=n_ref {
        for j in 1..=n_pred {
            let diag = table[i - 1][j - 1] + scores[i - 1][j - 1];
            let up = table[i - 1][j] + gap;
            let left = table[i][j - 1] + gap;
            table[i][j] = diag.max(up).max(left);
        }
    }
    table
}

/// Optimal alignment for a precomputed similarity matrix.
///
/// Traceback ties resolve as diagonal, then reference gap, then predicted
/// gap.
pub fn align_scores(scores: &[Vec<f64>], n_pred: usize, gap: f64) -> Alignment {
    let n_ref = scores.len();
    let table = fill_table(scores, n_pred, gap);
    let mut pairs = Vec::new();
    let mut ref_gaps = Vec::new();
    let mut pred_gaps = Vec::new();
    let (mut i, mut j) = (n_ref, n_pred);
    while i > 0 || j > 0 {
        let here = table[i][j];
        if i > 0 && j > 0 && here == table[i - 1][j - 1] + scores[i - 1][j - 1] {
            pairs.push(AlignedPair {
                ref_index: i - 1,
                pred_index: j - 1,
                score: scores[i - 1][j - 1],
            });
            i -= 1;
            j -= 1;
        } else if i > 0 && (j == 0 || here == table[i - 1][j] + gap) {
            ref_gaps.push(i - 1);
            i -= 1;
        } else {
            pred_gaps.push(j - 1);
            j -= 1;
        }
    }
    pairs.reverse();
    ref_gaps.reverse();
    pred_gaps.reverse();
    Alignment {
        pairs,
        ref_gaps,
        pred_gaps,
        total_score: table[n_ref][n_pred],
        n_ref,
        n_pred,
    }
}

/// Pairs whose similarity is strictly above `threshold`, in order.
pub fn filter_aligned_pairs(al: &Alignment, threshold: f64) -> Vec<AlignedPair> {
    al.pairs
        .iter()
        .copied()
        .filter(|p| p.score > threshold)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStats {
    pub naive_pairs: usize,
    pub evaluated_pairs: usize,
    pub reduction_pct: f64,
}

/// How many clause comparisons the alignment and filter saved relative to
/// the exhaustive `n_ref × n_pred` comparison.
pub fn comparison_stats(al: &Alignment, filtered_count: usize) -> ComparisonStats {
    let naive_pairs = al.n_ref * al.n_pred;
    let evaluated_pairs = filtered_count.min(al.pairs.len());
    ComparisonStats {
        naive_pairs,
        evaluated_pairs,
        reduction_pct: reduction_pct(naive_pairs, evaluated_pairs),
    }
}

pub fn reduction_pct(naive: usize, evaluated: usize) -> f64 {
    if naive == 0 {
        0.0
    } else {
        100.0 * (1.0 - evaluated as f64 / naive as f64)
    }
}
