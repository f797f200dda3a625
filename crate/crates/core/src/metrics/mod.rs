//! ROUGE-1, BLEU, METEOR and embedding BERTScore, plus efficiency means and
//! the two report tables.

mod efficiency;
mod lexical;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{cosine, EmbedError, Embedder, EmbeddingVector};

pub use efficiency::{aggregate_efficiency, aggregate_samples, EfficiencyReport, EfficiencySample};
pub use lexical::{bleu, bleu_n, meteor, rouge1, BLEU_MAX_N, METEOR_ALPHA, METEOR_BETA, METEOR_GAMMA};
pub use table::{efficiency_table, metric_table, Table, TableRow};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty input")]
    EmptyInput,
    #[error("nothing to aggregate")]
    EmptyList,
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    pub const ZERO: ScoreTriple = ScoreTriple {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ScoreTriple { precision, recall, f1 }
    }
}

/// Greedy-max cosine matching between token vectors. Similarities are
/// clamped to [0, 1] so the triple stays in range for any embedder.
pub fn bertscore_vectors(cand: &[EmbeddingVector], reference: &[EmbeddingVector]) -> Result<ScoreTriple, MetricError> {
    if cand.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sims = vec![vec![0.0; reference.len()]; cand.len()];
    for (i, c) in cand.iter().enumerate() {
        for (j, r) in reference.iter().enumerate() {
            sims[i][j] = cosine(c, r)?.clamp(0.0, 1.0);
        }
    }
    let precision = sims
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / cand.len() as f64;
    let recall = (0..reference.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(ScoreTriple::from_pr(precision, recall))
}

pub fn bertscore(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<ScoreTriple, MetricError> {
    let c = embedder.embed_tokens(candidate).map_err(empty_as_input)?;
    let r = embedder.embed_tokens(reference).map_err(empty_as_input)?;
    bertscore_vectors(&c, &r)
}

fn empty_as_input(e: EmbedError) -> MetricError {
    match e {
        EmbedError::EmptyInput => MetricError::EmptyInput,
        other => MetricError::Embed(other),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub rouge1: ScoreTriple,
    pub bleu: f64,
    pub meteor: f64,
    pub bertscore: ScoreTriple,
}

/// All four metrics for one pair. An empty candidate scores zero on
/// BERTScore instead of failing, so blank generations still count.
pub fn score_sample(candidate: &str, reference: &str, embedder: &dyn Embedder) -> Result<SampleScores, MetricError> {
    let bertscore = match bertscore(candidate, reference, embedder) {
        Err(MetricError::EmptyInput) => ScoreTriple::ZERO,
        other => other?,
    };
    Ok(SampleScores {
        rouge1: rouge1(candidate, reference),
        bleu: bleu(candidate, reference),
        meteor: meteor(candidate, reference),
        bertscore,
    })
}

/// Arithmetic means of per-sample scores. Each mean triple averages f1
/// directly rather than recombining the mean precision and recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rouge1: ScoreTriple,
    pub bleu: f64,
    pub meteor: f64,
    pub bertscore: ScoreTriple,
    pub n_samples: usize,
}

fn mean_triple(samples: &[SampleScores], f: impl Fn(&SampleScores) -> ScoreTriple) -> ScoreTriple {
    let n = samples.len() as f64;
    let (mut p, mut r, mut f1) = (0.0, 0.0, 0.0);
    for s in samples {
        let t = f(s);
        p += t.precision;
        r += t.recall;
        f1 += t.f1;
    }
    ScoreTriple {
        precision: p / n,
        recall: r / n,
        f1: f1 / n,
    }
}

impl MetricReport {
    pub fn from_samples(samples: &[SampleScores]) -> Result<Self, MetricError> {
        if samples.is_empty() {
            return Err(MetricError::EmptyList);
        }
        let n = samples.len() as f64;
        Ok(MetricReport {
            rouge1: mean_triple(samples, |s| s.rouge1),
            bleu: samples.iter().map(|s| s.bleu).sum::<f64>() / n,
            meteor: samples.iter().map(|s| s.meteor).sum::<f64>() / n,
            bertscore: mean_triple(samples, |s| s.bertscore),
            n_samples: samples.len(),
        })
    }
}
