use std::collections::HashMap;

use super::{tokenize, MetricScore, TokenSequence};

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// ROUGE-N F1 with clipped n-gram overlap.
///
/// # Panics
/// If `n` is 0.
pub fn rouge_n(candidate: &TokenSequence, reference: &TokenSequence, n: usize) -> MetricScore {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let cand = ngram_counts(candidate.tokens(), n);
    let refs = ngram_counts(reference.tokens(), n);
    let cand_total: usize = cand.values().sum();
    let ref_total: usize = refs.values().sum();
    if cand_total == 0 || ref_total == 0 {
        return MetricScore::unit(0.0);
    }
    let overlap: usize = cand
        .iter()
        .map(|(gram, &c)| c.min(refs.get(gram).copied().unwrap_or(0)))
        .sum();
    MetricScore::unit(f1(
        overlap as f64 / cand_total as f64,
        overlap as f64 / ref_total as f64,
    ))
}

/// Length of the longest common subsequence, single-row dynamic program.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { above.max(row[j]) };
            diag = above;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 from the LCS length.
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> MetricScore {
    if candidate.is_empty() || reference.is_empty() {
        return MetricScore::unit(0.0);
    }
    let l = lcs_len(candidate.tokens(), reference.tokens()) as f64;
    MetricScore::unit(f1(l / candidate.len() as f64, l / reference.len() as f64))
}

/// Mean of ROUGE-1, ROUGE-2 and ROUGE-L.
pub fn rouge_avg(candidate: &str, reference: &str) -> MetricScore {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    let sum = rouge_n(&c, &r, 1).value + rouge_n(&c, &r, 2).value + rouge_l(&c, &r).value;
    MetricScore::unit(sum / 3.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_pair() {
        let c = tokenize("the cat sat");
        let r = tokenize("the cat sat on the mat");
        assert_abs_diff_eq!(rouge_n(&c, &r, 1).value, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rouge_n(&c, &r, 2).value, 4.0 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rouge_l(&c, &r).value, 2.0 / 3.0, epsilon = 1e-12);
        let avg = (2.0 / 3.0 + 4.0 / 7.0 + 2.0 / 3.0) / 3.0;
        assert_abs_diff_eq!(rouge_avg("the cat sat", "the cat sat on the mat").value, avg, epsilon = 1e-12);
        assert_abs_diff_eq!(avg, 0.6349, epsilon = 1e-4);
    }

    #[test]
    fn degenerate_inputs() {
        let r = tokenize("a b c");
        assert_eq!(rouge_l(&tokenize("x y"), &r).value, 0.0);
        assert_eq!(rouge_avg("", "a b c").value, 0.0);
        assert_eq!(rouge_avg("a b c", "a b c").value, 1.0);
        assert_eq!(rouge_n(&tokenize("a"), &tokenize("a"), 2).value, 0.0);
    }

    fn words() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "the", "cat"]), 0..12)
            .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in words(), b in words(), n in 1usize..4) {
            let (x, y) = (tokenize(&a), tokenize(&b));
            let fwd = rouge_n(&x, &y, n).value;
            prop_assert!((0.0..=1.0).contains(&fwd));
            prop_assert!((fwd - rouge_n(&y, &x, n).value).abs() < 1e-12);
            let l = rouge_l(&x, &y).value;
            prop_assert!((0.0..=1.0).contains(&l));
            prop_assert!((l - rouge_l(&y, &x).value).abs() < 1e-12);
        }

        #[test]
        fn identity_scores_one(a in words(), n in 1usize..4) {
            let x = tokenize(&a);
            prop_assume!(x.len() >= n);
            prop_assert_eq!(rouge_n(&x, &x, n).value, 1.0);
            prop_assert_eq!(rouge_l(&x, &x).value, 1.0);
        }
    }
}
