//! Quality and diversity scoring: ROUGE-L F1, smoothed sentence BLEU-4,
//! Self-BLEU, and the EDA / EDA_range composite trade-off scores.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Highest n-gram order used by BLEU. Hypotheses shorter than this only use
/// the orders they can actually form.
const BLEU_MAX_ORDER: usize = 4;

/// Match-count stand-in for n-gram orders (n >= 2) with zero clipped matches.
const BLEU_EPSILON: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("at least one reference is required")]
    NoReferences,
    #[error("self-BLEU needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("{axis} normalizer must be positive")]
    ZeroNormalizer { axis: &'static str },
    #[error("{axis} range is degenerate (max must exceed min)")]
    DegenerateRange { axis: &'static str },
}

/// One shared normalization for every text metric: lowercase, strip anything
/// that is not alphanumeric to a space, split on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L F1 in [0, 1]: P = LCS/|hyp|, R = LCS/|ref|, F1 = 2PR/(P+R).
/// Empty sequences and zero LCS score 0.
pub fn rouge_l_f1<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(hypothesis, reference);
    if lcs == 0 {
        return 0.0;
    }
    let precision = lcs as f64 / hypothesis.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    for window in seq.windows(n) {
        *counts.entry(window).or_insert(0) += 1;
    }
    counts
}

/// Closest reference length to the hypothesis length; ties go to the shorter
/// reference.
fn closest_reference_length<T>(hyp_len: usize, references: &[&[T]]) -> usize {
    references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(hyp_len), len))
        .expect("references checked non-empty")
}

/// Smoothed sentence BLEU-4 in [0, 100].
///
/// Clipped n-gram precisions for n = 1..=min(4, |hyp|) with uniform weights;
/// zero unigram matches score 0 outright, while higher orders with zero
/// matches fall back to an epsilon match count of 0.1. Brevity penalty is
/// exp(1 - r/h) for h < r against the closest reference length.
pub fn sentence_bleu<T: Eq + Hash>(
    hypothesis: &[T],
    references: &[&[T]],
) -> Result<f64, MetricsError> {
    if references.is_empty() {
        return Err(MetricsError::NoReferences);
    }
    let hyp_len = hypothesis.len();
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let max_order = BLEU_MAX_ORDER.min(hyp_len);
    let mut log_precision_sum = 0.0;
    for n in 1..=max_order {
        let hyp_counts = ngram_counts(hypothesis, n);
        let total = (hyp_len - n + 1) as u64;
        let mut max_ref_counts: HashMap<&[T], u64> = HashMap::new();
        for reference in references {
            for (gram, count) in ngram_counts(reference, n) {
                let entry = max_ref_counts.entry(gram).or_insert(0);
                *entry = (*entry).max(count);
            }
        }
        let clipped: u64 = hyp_counts
            .iter()
            .map(|(gram, &count)| count.min(max_ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        if n == 1 && clipped == 0 {
            return Ok(0.0);
        }
        let numerator = if clipped == 0 {
            BLEU_EPSILON
        } else {
            clipped as f64
        };
        log_precision_sum += (numerator / total as f64).ln();
    }

    let ref_len = closest_reference_length(hyp_len, references);
    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity_penalty * (log_precision_sum / max_order as f64).exp())
}

/// Mean of each sample's BLEU against the other samples, in [0, 100]. Lower
/// means more diverse. The per-sample scores are summed in sorted order so
/// the result is exactly permutation-invariant.
pub fn self_bleu<T: Eq + Hash>(samples: &[Vec<T>]) -> Result<f64, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples(samples.len()));
    }
    let mut scores = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let references: Vec<&[T]> = samples
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, r)| r.as_slice())
            .collect();
        scores.push(sentence_bleu(sample, &references)?);
    }
    scores.sort_by(f64::total_cmp);
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Per-sweep normalization constants for the composite scores: the highest
/// and lowest quality and diversity values observed across every grid point
/// of one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepNormalizers {
    pub q_max: f64,
    pub q_min: f64,
    pub d_max: f64,
    pub d_min: f64,
}

/// Euclidean distance from the ultimate aim (quality = q_max, diversity = 0):
/// `100 * sqrt(((Q - q)/Q)^2 + w^2 (d/D)^2)` with `w = Q/D`. Lower is better.
pub fn eda(q: f64, d: f64, norms: &SweepNormalizers) -> Result<f64, MetricsError> {
    if norms.q_max <= 0.0 {
        return Err(MetricsError::ZeroNormalizer { axis: "quality" });
    }
    if norms.d_max <= 0.0 {
        return Err(MetricsError::ZeroNormalizer { axis: "diversity" });
    }
    let omega = norms.q_max / norms.d_max;
    let dq = (norms.q_max - q) / norms.q_max;
    let dd = omega * (d / norms.d_max);
    Ok(100.0 * (dq * dq + dd * dd).sqrt())
}

/// Range-normalized variant of [`eda`]:
/// `100 * sqrt(((Q - q)/(Q - q*))^2 + ((d* - d)/(D - d*))^2)`.
pub fn eda_range(q: f64, d: f64, norms: &SweepNormalizers) -> Result<f64, MetricsError> {
    use std::cmp::Ordering;
    if norms.q_max.partial_cmp(&norms.q_min) != Some(Ordering::Greater) {
        return Err(MetricsError::DegenerateRange { axis: "quality" });
    }
    if norms.d_max.partial_cmp(&norms.d_min) != Some(Ordering::Greater) {
        return Err(MetricsError::DegenerateRange { axis: "diversity" });
    }
    let dq = (norms.q_max - q) / (norms.q_max - norms.q_min);
    let dd = (norms.d_min - d) / (norms.d_max - norms.d_min);
    Ok(100.0 * (dq * dq + dd * dd).sqrt())
}
