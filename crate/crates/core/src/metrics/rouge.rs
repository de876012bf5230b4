use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Lowercases and splits on every maximal run of non-alphanumeric
/// characters. No stemming, no stopword removal.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub const PERFECT: RougeScore = RougeScore {
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
    };
    pub const ZERO: RougeScore = RougeScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

fn bag(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    counts
}

/// Unigram-overlap precision/recall/F1 of `candidate` against `reference`.
///
/// Both sides empty scores (1, 1, 1); exactly one side empty scores 0.
pub fn rouge1(candidate: &str, reference: &str) -> RougeScore {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    match (cand.is_empty(), refs.is_empty()) {
        (true, true) => return RougeScore::PERFECT,
        (true, false) | (false, true) => return RougeScore::ZERO,
        _ => {}
    }
    let cand_bag = bag(&cand);
    let ref_bag = bag(&refs);
    let overlap: usize = cand_bag
        .iter()
        .map(|(w, &n)| n.min(ref_bag.get(w).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_pr(
        overlap as f64 / cand.len() as f64,
        overlap as f64 / refs.len() as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Governing Law."), vec!["governing", "law"]);
        assert_eq!(tokenize("Section 409A"), vec!["section", "409a"]);
        assert_eq!(tokenize("  (a)--b\n\tC  "), vec!["a", "b", "c"]);
    }

    #[test]
    fn hand_counts() {
        assert_eq!(
            rouge1("same words here", "same words here"),
            RougeScore::PERFECT
        );
        let s = rouge1("a b c d", "a b");
        assert_eq!(s.precision, 0.5);
        assert_eq!(s.recall, 1.0);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge1("x y", "z w"), RougeScore::ZERO);
    }

    #[test]
    fn empty_side_conventions() {
        assert_eq!(rouge1("", ""), RougeScore::PERFECT);
        assert_eq!(rouge1("...", "!!"), RougeScore::PERFECT);
        assert_eq!(rouge1("", "a"), RougeScore::ZERO);
        assert_eq!(rouge1("a", ""), RougeScore::ZERO);
    }

    #[test]
    fn repeated_tokens_clip_at_reference_count() {
        let s = rouge1("the the the", "the cat");
        assert!((s.precision - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
    }
}
