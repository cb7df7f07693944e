//! Property tests for structural invariants: scheme round-trips, split
//! laws, metric symmetries, and tokenizer behavior.

use proptest::prelude::*;

use nlpipe_core::corpus::{
    biluo_to_spans, holdout_split, kfold_split, spans_to_biluo, Dataset, Sentence, Span,
};
use nlpipe_core::metrics::{cohen_kappa, pairwise_f1_no_o, span_prf};
use nlpipe_core::nn::{softmax, Tensor};
use nlpipe_core::pipeline::{detokenize, tokenize};

/// Non-overlapping sorted spans over a sentence of length `n`.
fn span_set(n: usize) -> impl Strategy<Value = Vec<Span>> {
    prop::collection::vec((0..n, 1..=3usize, 0..3usize), 0..=n)
        .prop_map(move |raw| {
            let labels = ["PER", "ORG", "LOC"];
            let mut spans: Vec<Span> = Vec::new();
            let mut next_free = 0usize;
            let mut picks = raw;
            picks.sort_by_key(|&(s, _, _)| s);
            for (start, len, label) in picks {
                let start = start.max(next_free);
                let end = (start + len).min(n);
                if start >= end {
                    continue;
                }
                spans.push(Span { start, end, label: labels[label].to_string() });
                next_free = end;
            }
            spans
        })
}

proptest! {
    #[test]
    fn biluo_round_trip((n, spans) in (1..20usize).prop_flat_map(|n| (Just(n), span_set(n)))) {
        let tags = spans_to_biluo(n, &spans).unwrap();
        prop_assert_eq!(biluo_to_spans(&tags).unwrap(), spans);
    }

    #[test]
    fn kfold_is_disjoint_and_exhaustive(n in 4..40usize, k in 2..8usize, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let ds = Dataset::new(
            (0..n).map(|i| Sentence::from_words(&[&format!("w{i}")])).collect(),
        );
        let folds = kfold_split(&ds, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen: Vec<String> = Vec::new();
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), n);
            for s in &test.sentences {
                seen.push(s.texts()[0].to_string());
            }
            // No test sentence appears in its own training split.
            for s in &test.sentences {
                prop_assert!(!train.sentences.iter().any(|t| t.texts() == s.texts()));
            }
        }
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), n);
    }

    #[test]
    fn holdout_partitions(n in 10..60usize, seed in any::<u64>()) {
        let ds = Dataset::new(
            (0..n).map(|i| Sentence::from_words(&[&format!("w{i}")])).collect(),
        );
        let (train, dev, test) = holdout_split(&ds, (0.8, 0.1, 0.1), seed).unwrap();
        prop_assert_eq!(train.len() + dev.len() + test.len(), n);
        prop_assert!(!train.is_empty());
    }

    #[test]
    fn kappa_symmetric_and_bounded(n in 1..30usize, seed in any::<u64>()) {
        let mut rng = nlpipe_core::hash::Rng::new(seed);
        let tags = ["PER", "ORG", "LOC", "O"];
        let a: Vec<String> = (0..n).map(|_| tags[rng.next_below(4) as usize].to_string()).collect();
        let b: Vec<String> = (0..n).map(|_| tags[rng.next_below(4) as usize].to_string()).collect();
        if let (Ok(x), Ok(y)) = (cohen_kappa(&a, &b), cohen_kappa(&b, &a)) {
            prop_assert!((x - y).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&x));
            if a == b {
                prop_assert!((x - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pairwise_f1_symmetric(n in 1..30usize, seed in any::<u64>()) {
        let mut rng = nlpipe_core::hash::Rng::new(seed);
        let pool = ["O", "B-PER", "I-PER", "B-LOC", "B-ORG"];
        let a: Vec<String> = (0..n).map(|_| pool[rng.next_below(5) as usize].to_string()).collect();
        let b: Vec<String> = (0..n).map(|_| pool[rng.next_below(5) as usize].to_string()).collect();
        prop_assert_eq!(pairwise_f1_no_o(&a, &b).unwrap(), pairwise_f1_no_o(&b, &a).unwrap());
    }

    #[test]
    fn span_prf_matches_brute_force(n in 1..15usize, seed in any::<u64>()) {
        let mut rng = nlpipe_core::hash::Rng::new(seed);
        let rand_spans = |rng: &mut nlpipe_core::hash::Rng| {
            let labels = ["PER", "ORG", "LOC"];
            let mut spans = Vec::new();
            let mut pos = 0usize;
            while pos < n {
                if rng.next_below(2) == 0 {
                    let len = 1 + rng.next_below(3.min(n - pos) as u64) as usize;
                    spans.push(Span {
                        start: pos,
                        end: pos + len,
                        label: labels[rng.next_below(3) as usize].to_string(),
                    });
                    pos += len;
                } else {
                    pos += 1;
                }
            }
            spans
        };
        let gold = rand_spans(&mut rng);
        let pred = rand_spans(&mut rng);
        let (p, r, f1) = span_prf(&gold, &pred);
        let tp = pred.iter().filter(|s| gold.contains(s)).count() as f64;
        let bp = if pred.is_empty() { if gold.is_empty() { 1.0 } else { 0.0 } } else { tp / pred.len() as f64 };
        let br = if gold.is_empty() { if pred.is_empty() { 1.0 } else { 0.0 } } else { tp / gold.len() as f64 };
        let bf = if bp + br == 0.0 { 0.0 } else { 2.0 * bp * br / (bp + br) };
        prop_assert_eq!((p, r, f1), (bp, br, bf));
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1..6usize, cols in 1..6usize, seed in any::<u64>()) {
        let mut rng = nlpipe_core::hash::Rng::new(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.uniform(10.0)).collect();
        let t = Tensor::from_vec(&[rows, cols], data);
        let s = softmax(&t);
        for i in 0..rows {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(s.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn tokenize_round_trips_clean_text(words in prop::collection::vec("[a-zA-Z0-9,.!?-]{1,8}", 1..8)) {
        // Single-space-separated input with no bare-punctuation artifacts.
        let text = words.join(" ");
        prop_assert_eq!(detokenize(&tokenize(&text)), text);
    }
}
