//! Token-overlap metrics over lowercased `word_punct` tokens.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};

use crate::corpus::{lowercase_tokens, TokenizerProfile};

use super::ScoreTriple;

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_BETA: f64 = 3.0;
pub const METEOR_GAMMA: f64 = 0.5;

pub const BLEU_MAX_N: usize = 4;

pub(crate) fn tokens(text: &str) -> Vec<String> {
    lowercase_tokens(text, TokenizerProfile::WordPunct)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped matches and candidate total for n-grams of size `n`.
fn clipped(cand: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c
        .iter()
        .map(|(gram, &count)| count.min(r.get(gram).copied().unwrap_or(0)))
        .sum();
    (matched, cand.len().saturating_sub(n - 1))
}

pub fn rouge1(candidate: &str, reference: &str) -> ScoreTriple {
    let cand = tokens(candidate);
    let reference = tokens(reference);
    if cand.is_empty() || reference.is_empty() {
        return ScoreTriple::ZERO;
    }
    let (overlap, _) = clipped(&cand, &reference, 1);
    ScoreTriple::from_pr(
        overlap as f64 / cand.len() as f64,
        overlap as f64 / reference.len() as f64,
    )
}

/// Sentence BLEU up to 4-grams.
pub fn bleu(candidate: &str, reference: &str) -> f64 {
    bleu_n(candidate, reference, BLEU_MAX_N)
}

/// Sentence BLEU: geometric mean of clipped precisions for n = 1..=max_n,
/// where a zero match count for n >= 2 is smoothed to 1/(total + 1), times
/// the brevity penalty.
pub fn bleu_n(candidate: &str, reference: &str, max_n: usize) -> f64 {
    let cand = tokens(candidate);
    let reference = tokens(reference);
    if cand.is_empty() || reference.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (matched, total) = clipped(&cand, &reference, n);
        let p = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// (candidate index, reference index) pairs from exact then stem matching,
/// each stage greedy left to right over unmatched positions.
pub(crate) fn meteor_alignment(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let stemmer = Stemmer::create(Algorithm::English);
    let cand_stems: Vec<String> = cand.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    let ref_stems: Vec<String> = reference.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    let mut cand_used = vec![false; cand.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    for (cw, rw) in [(cand, reference), (&cand_stems[..], &ref_stems[..])] {
        for (i, c) in cw.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            if let Some(j) = (0..rw.len()).find(|&j| !ref_used[j] && rw[j] == *c) {
                cand_used[i] = true;
                ref_used[j] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

pub fn meteor(candidate: &str, reference: &str) -> f64 {
    let cand = tokens(candidate);
    let reference = tokens(reference);
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let pairs = meteor_alignment(&cand, &reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1)
        .count();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_BETA);
    (fmean * (1.0 - penalty)).clamp(0.0, 1.0)
}
