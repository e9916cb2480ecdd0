//! Text quality metrics: word error rate, sentence resegmentation and corpus
//! BLEU. Words are whitespace tokens compared case-sensitively.

use crate::types::Token;
use std::collections::HashMap;

/// Word-level Levenshtein distance (substitutions, deletions, insertions all
/// cost 1).
pub fn edit_distance(a: &[Token], b: &[Token]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut row: Vec<usize> = (0..=short.len()).collect();
    for (j, lt) in long.iter().enumerate() {
        let mut prev_diag = row[0];
        row[0] = j + 1;
        for (i, st) in short.iter().enumerate() {
            let cost = if st == lt { prev_diag } else { prev_diag + 1 };
            prev_diag = row[i + 1];
            row[i + 1] = cost.min(row[i] + 1).min(prev_diag + 1);
        }
    }
    row[short.len()]
}

/// Case-sensitive WER over aligned sentence pairs: total edit operations
/// divided by total reference words. Absent when the reference is empty.
pub fn wer(hyp_sentences: &[Vec<Token>], ref_sentences: &[Vec<Token>]) -> Option<f64> {
    assert_eq!(hyp_sentences.len(), ref_sentences.len(), "wer expects aligned sentences");
    let reference_words: usize = ref_sentences.iter().map(|s| s.len()).sum();
    if reference_words == 0 {
        return None;
    }
    let errors: usize =
        hyp_sentences.iter().zip(ref_sentences).map(|(h, r)| edit_distance(h, r)).sum();
    Some(errors as f64 / reference_words as f64)
}

/// Cuts a hypothesis word stream into as many consecutive (possibly empty)
/// sentences as the reference has, minimizing the summed word edit distance.
/// Ties pick the earliest cut points.
pub fn resegment(hyp_words: &[Token], ref_sentences: &[Vec<Token>]) -> Vec<Vec<Token>> {
    let n_refs = ref_sentences.len();
    assert!(n_refs > 0, "resegment needs a nonempty reference");
    let h = hyp_words.len();
    const INF: usize = usize::MAX / 2;

    // cost[j][i]: best distance aligning the first i hyp words to the first
    // j reference sentences; cut[j][i]: chosen start of sentence j (smallest
    // optimal k, so ties break toward the earliest cut).
    let mut cost = vec![vec![INF; h + 1]; n_refs + 1];
    let mut cut = vec![vec![0usize; h + 1]; n_refs + 1];
    cost[0][0] = 0;
    for (j, sentence) in ref_sentences.iter().enumerate() {
        for k in 0..=h {
            if cost[j][k] >= INF {
                continue;
            }
            // Extend hyp[k..i] one word at a time, reusing the DP row of the
            // edit distance against this reference sentence.
            let m = sentence.len();
            let mut row: Vec<usize> = (0..=m).collect();
            for i in k..=h {
                if i > k {
                    let word = &hyp_words[i - 1];
                    let mut prev_diag = row[0];
                    row[0] = i - k;
                    for (x, rt) in sentence.iter().enumerate() {
                        let sub = if word == rt { prev_diag } else { prev_diag + 1 };
                        prev_diag = row[x + 1];
                        row[x + 1] = sub.min(row[x] + 1).min(prev_diag + 1);
                    }
                }
                let total = cost[j][k] + row[m];
                if total < cost[j + 1][i] {
                    cost[j + 1][i] = total;
                    cut[j + 1][i] = k;
                }
            }
        }
    }

    // Walk the cut points back.
    let mut bounds = vec![h; n_refs + 1];
    for j in (1..=n_refs).rev() {
        bounds[j - 1] = cut[j][bounds[j]];
    }
    (0..n_refs).map(|j| hyp_words[bounds[j]..bounds[j + 1]].to_vec()).collect()
}

/// Summed edit distance of a segmentation against the reference.
pub fn segmentation_cost(segments: &[Vec<Token>], ref_sentences: &[Vec<Token>]) -> usize {
    segments.iter().zip(ref_sentences).map(|(s, r)| edit_distance(s, r)).sum()
}

/// Corpus-level BLEU in [0, 100]: geometric mean of 1..4-gram modified
/// precisions with brevity penalty, no smoothing (any zero precision gives
/// 0). Absent when the reference is empty.
pub fn bleu(hyp_sentences: &[Vec<Token>], ref_sentences: &[Vec<Token>]) -> Option<f64> {
    assert_eq!(hyp_sentences.len(), ref_sentences.len(), "bleu expects aligned sentences");
    let ref_len: usize = ref_sentences.iter().map(|s| s.len()).sum();
    if ref_len == 0 {
        return None;
    }
    let hyp_len: usize = hyp_sentences.iter().map(|s| s.len()).sum();
    if hyp_len == 0 {
        return Some(0.0);
    }

    let mut log_precision_sum = 0.0;
    for n in 1..=4usize {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (hyp, reference) in hyp_sentences.iter().zip(ref_sentences) {
            if hyp.len() < n {
                continue;
            }
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            total += hyp.len() - n + 1;
            for (gram, count) in hyp_counts {
                if let Some(&available) = ref_counts.get(&gram) {
                    matched += count.min(available);
                }
            }
        }
        if total == 0 || matched == 0 {
            return Some(0.0);
        }
        log_precision_sum += (matched as f64 / total as f64).ln();
    }

    let brevity = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    Some(100.0 * brevity * (log_precision_sum / 4.0).exp())
}

fn ngram_counts(sentence: &[Token], n: usize) -> HashMap<&[Token], usize> {
    let mut counts = HashMap::new();
    if sentence.len() >= n {
        for window in sentence.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}
