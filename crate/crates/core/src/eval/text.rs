use std::collections::{HashMap, HashSet};

const SMOOTHING: f64 = 1e-9;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

fn modified_precision<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T], n: usize) -> f64 {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let total: usize = h.values().sum();
    if total == 0 && r.is_empty() {
        return 1.0;
    }
    let matched: usize = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
    let num = if matched == 0 { SMOOTHING } else { matched as f64 };
    num / total.max(1) as f64
}

/// Sentence BLEU-2 on a 0-100 scale: geometric mean of the clipped 1- and
/// 2-gram precisions times the brevity penalty. Zero match counts are
/// replaced by 1e-9; an order with no n-grams on either side counts as
/// matched. An empty hypothesis scores 0.
pub fn bleu2<S: AsRef<str>, T: AsRef<str>>(hyp: &[S], reference: &[T]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let p1 = modified_precision(hyp, reference, 1);
    let p2 = modified_precision(hyp, reference, 2);
    let (c, r) = (hyp.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    100.0 * bp * (p1 * p2).sqrt()
}

/// Mean sentence BLEU-2.
pub fn corpus_bleu2<S: AsRef<str>, T: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> f64 {
    if hyps.is_empty() {
        return 0.0;
    }
    hyps.iter().zip(refs).map(|(h, r)| bleu2(h, r)).sum::<f64>() / hyps.len() as f64
}

/// Number of distinct n-grams over all hypotheses.
pub fn distinct_n<S: AsRef<str>>(hyps: &[Vec<S>], n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut seen: HashSet<Vec<&str>> = HashSet::new();
    for h in hyps {
        if h.len() >= n {
            for w in h.windows(n) {
                seen.insert(w.iter().map(AsRef::as_ref).collect());
            }
        }
    }
    seen.len()
}
