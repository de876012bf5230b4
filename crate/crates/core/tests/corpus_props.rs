use clausepipe_core::corpus::{
    is_partition, label_proportions, parse_annotated_document, serialize_document,
    stratified_multilabel_split, Clause, ClauseLabel, Document, LabelSet, SplitFractions,
    NUM_LABELS,
};
use proptest::prelude::*;

fn label_set() -> impl Strategy<Value = LabelSet> {
    prop::collection::btree_set(1u8..=14, 0..4).prop_map(|ids| {
        ids.into_iter()
            .map(|i| ClauseLabel::new(i).unwrap())
            .collect()
    })
}

/// Clause text: words with punctuation, inner newlines and brackets that
/// do not form markers.
fn clause_text() -> impl Strategy<Value = String> {
    let word = || prop::string::string_regex("[A-Za-z0-9áéíóúñç.,;:()\\[\\]'\"§%-]{1,12}").unwrap();
    let sep = prop::sample::select(vec![" ", " ", " ", "\n", "\t"]);
    (word(), prop::collection::vec((sep, word()), 0..15)).prop_map(|(first, rest)| {
        rest.into_iter().fold(first, |mut s, (sep, w)| {
            s.push_str(sep);
            s.push_str(&w);
            s
        })
    })
}

fn document() -> impl Strategy<Value = Document> {
    prop::collection::vec((clause_text(), label_set()), 0..8).prop_map(|parts| {
        let clauses = parts
            .into_iter()
            .enumerate()
            .map(|(i, (text, labels))| Clause::new(i, &text, labels).unwrap())
            .collect();
        Document::new("doc", clauses)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn parse_inverts_serialize(doc in document()) {
        let text = serialize_document(&doc);
        let back = parse_annotated_document(&text, "doc").unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(serialize_document(&back), text);
        prop_assert_eq!(back.clause_content(), doc.clause_content());
    }
}

fn synthetic(n: usize, seed: u64) -> Vec<Clause> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut labels = LabelSet::new();
            // label 14 about half the time, the rest uniform
            let first = if rng.random_bool(0.5) {
                13
            } else {
                rng.random_range(0..13)
            };
            labels.insert(ClauseLabel::from_index(first).unwrap());
            if rng.random_bool(0.2) {
                labels.insert(ClauseLabel::from_index(rng.random_range(0..NUM_LABELS)).unwrap());
            }
            if rng.random_bool(0.03) {
                labels.clear();
            }
            Clause::new(i, &format!("clause {i}"), labels).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn split_partitions_and_hits_sizes(n in 10usize..400, corpus_seed: u64, seed: u64) {
        let clauses = synthetic(n, corpus_seed);
        let f = SplitFractions::default();
        let split = stratified_multilabel_split(&clauses, f, seed).unwrap();
        prop_assert!(is_partition(&split, n));
        let (train, val, test) = split.sizes();
        let test_target = f.test * n as f64;
        prop_assert!((test as f64 - test_target).abs() < 1.0 + 1e-9, "test {} target {}", test, test_target);
        let pool = (train + val) as f64;
        prop_assert!((val as f64 - f.validation_of_train * pool).abs() < 1.0 + 1e-9);
        prop_assert_eq!(&stratified_multilabel_split(&clauses, f, seed).unwrap(), &split);
    }
}

#[test]
fn split_preserves_label_shares() {
    let clauses = synthetic(2000, 5);
    let split = stratified_multilabel_split(&clauses, SplitFractions::default(), 1).unwrap();
    let all: Vec<usize> = (0..clauses.len()).collect();
    let overall = label_proportions(&clauses, &all);
    for subset in [&split.train, &split.validation, &split.test] {
        let shares = label_proportions(&clauses, subset);
        for l in 0..NUM_LABELS {
            assert!(
                (shares[l] - overall[l]).abs() < 0.05,
                "label {} drifts",
                l + 1
            );
        }
    }
}

#[test]
fn split_rejects_bad_input() {
    assert!(stratified_multilabel_split(&[], SplitFractions::default(), 0).is_err());
    let bad = SplitFractions {
        train: 0.6,
        test: 0.3,
        validation_of_train: 0.1,
    };
    assert!(stratified_multilabel_split(&synthetic(10, 0), bad, 0).is_err());
}
