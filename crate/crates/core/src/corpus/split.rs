//! Stratified train/validation/test splitting for multi-label clauses.
//!
//! Uses iterative stratification: labels are visited from the one with the
//! fewest unassigned examples upwards, and each example carrying that label
//! goes to the subset that still needs the most examples of it. A subset
//! stops receiving examples once it reaches its target size, so sizes stay
//! within one item of the requested ratios. Clauses without labels are
//! distributed last by overall remaining demand.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::format::Clause;
use super::label::{ClauseLabel, NUM_LABELS};
use super::CorpusError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    /// Share of the training portion carved out as validation.
    pub validation_of_train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            test: 0.2,
            validation_of_train: 0.1,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, value) in [
            ("train", self.train),
            ("test", self.test),
            ("validation_of_train", self.validation_of_train),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(CorpusError::InvalidFraction(format!(
                    "{name} fraction {value} must lie in (0, 1)"
                )));
            }
        }
        if (self.train + self.test - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidFraction(format!(
                "train + test must equal 1, got {}",
                self.train + self.test
            )));
        }
        Ok(())
    }
}

/// Indices into the clause slice that was split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
    /// Labels with no instance in the input; stratification ignores them.
    pub absent_labels: Vec<ClauseLabel>,
}

impl CorpusSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn select<'a>(&self, clauses: &'a [Clause], subset: &[usize]) -> Vec<&'a Clause> {
        subset.iter().map(|&i| &clauses[i]).collect()
    }
}

pub fn stratified_multilabel_split(
    clauses: &[Clause],
    fractions: SplitFractions,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    fractions.validate()?;
    if clauses.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let absent_labels: Vec<ClauseLabel> = ClauseLabel::all()
        .filter(|l| !clauses.iter().any(|c| c.labels.contains(l)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label_sets: Vec<Vec<usize>> = clauses
        .iter()
        .map(|c| c.labels.iter().map(|l| l.index()).collect())
        .collect();

    let all: Vec<usize> = (0..clauses.len()).collect();
    let outer = iterative_stratification(
        &all,
        &label_sets,
        &[fractions.train, fractions.test],
        &mut rng,
    );
    let (train_pool, test) = (&outer[0], &outer[1]);

    let inner = iterative_stratification(
        train_pool,
        &label_sets,
        &[
            1.0 - fractions.validation_of_train,
            fractions.validation_of_train,
        ],
        &mut rng,
    );

    let sorted = |mut v: Vec<usize>| {
        v.sort_unstable();
        v
    };
    Ok(CorpusSplit {
        train: sorted(inner[0].clone()),
        validation: sorted(inner[1].clone()),
        test: sorted(test.clone()),
        seed,
        absent_labels,
    })
}

/// Splits `items` (indices into `label_sets`) into `ratios.len()` subsets.
fn iterative_stratification(
    items: &[usize],
    label_sets: &[Vec<usize>],
    ratios: &[f64],
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let k = ratios.len();
    let mut subsets = vec![Vec::new(); k];

    let mut pending: Vec<usize> = items.to_vec();
    pending.shuffle(rng);

    let mut label_totals = [0usize; NUM_LABELS];
    for &i in &pending {
        for &l in &label_sets[i] {
            label_totals[l] += 1;
        }
    }
    let mut demand: Vec<f64> = ratios.iter().map(|r| r * pending.len() as f64).collect();
    let mut label_demand: Vec<[f64; NUM_LABELS]> = ratios
        .iter()
        .map(|r| {
            let mut row = [0.0; NUM_LABELS];
            for (l, &n) in label_totals.iter().enumerate() {
                row[l] = r * n as f64;
            }
            row
        })
        .collect();
    let mut remaining = label_totals;
    let mut assigned = vec![false; label_sets.len()];

    while let Some(label) = (0..NUM_LABELS)
        .filter(|&l| remaining[l] > 0)
        .min_by_key(|&l| (remaining[l], l))
    {
        let carriers: Vec<usize> = pending
            .iter()
            .copied()
            .filter(|&i| !assigned[i] && label_sets[i].contains(&label))
            .collect();
        for item in carriers {
            let target = pick_subset(&demand, Some(&label_demand), label, rng);
            subsets[target].push(item);
            assigned[item] = true;
            demand[target] -= 1.0;
            for &l in &label_sets[item] {
                label_demand[target][l] -= 1.0;
                remaining[l] -= 1;
            }
        }
    }

    for &item in &pending {
        if !assigned[item] {
            let target = pick_subset(&demand, None, 0, rng);
            subsets[target].push(item);
            assigned[item] = true;
            demand[target] -= 1.0;
        }
    }
    subsets
}

/// Among subsets that are not yet full: the one with the largest label
/// demand, then largest overall demand, then a seeded random choice among
/// the remaining ties.
fn pick_subset(
    demand: &[f64],
    label_demand: Option<&Vec<[f64; NUM_LABELS]>>,
    label: usize,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut candidates: Vec<usize> = (0..demand.len()).filter(|&j| demand[j] > 0.0).collect();
    if candidates.is_empty() {
        candidates = (0..demand.len()).collect();
    }
    if let Some(ld) = label_demand {
        let best = candidates
            .iter()
            .map(|&j| ld[j][label])
            .fold(f64::MIN, f64::max);
        candidates.retain(|&j| ld[j][label] == best);
    }
    let best = candidates
        .iter()
        .map(|&j| demand[j])
        .fold(f64::MIN, f64::max);
    candidates.retain(|&j| demand[j] == best);
    if candidates.len() == 1 {
        candidates[0]
    } else {
        candidates[rng.random_range(0..candidates.len())]
    }
}

/// Per-label share of clauses in `subset` carrying each label.
pub fn label_proportions(clauses: &[Clause], subset: &[usize]) -> [f64; NUM_LABELS] {
    let mut counts = [0usize; NUM_LABELS];
    for &i in subset {
        for l in &clauses[i].labels {
            counts[l.index()] += 1;
        }
    }
    let n = subset.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

/// Checks that `split` partitions `0..n`.
pub fn is_partition(split: &CorpusSplit, n: usize) -> bool {
    let mut seen = BTreeSet::new();
    let total = split.train.len() + split.validation.len() + split.test.len();
    split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .all(|&i| i < n && seen.insert(i))
        && total == n
}
