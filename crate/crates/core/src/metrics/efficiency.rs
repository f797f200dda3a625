use serde::{Deserialize, Serialize};

use crate::genclient::GenerationResult;

use super::MetricError;

/// Token usage and timing of one successful generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EfficiencySample {
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub generation_ms: u64,
    pub retrieval_ms: u64,
}

impl From<&GenerationResult> for EfficiencySample {
    fn from(g: &GenerationResult) -> Self {
        EfficiencySample {
            input_tokens: g.input_tokens,
            output_tokens: g.output_tokens,
            generation_ms: g.latency_ms,
            retrieval_ms: 0,
        }
    }
}

/// Means over samples. `mean_response_time_s` is retrieval plus generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_response_time_s: f64,
    pub mean_generation_time_s: f64,
    pub mean_retrieval_time_s: f64,
    pub n_samples: usize,
}

pub fn aggregate_efficiency(results: &[GenerationResult]) -> Result<EfficiencyReport, MetricError> {
    let samples: Vec<EfficiencySample> = results.iter().map(EfficiencySample::from).collect();
    aggregate_samples(&samples)
}

pub fn aggregate_samples(samples: &[EfficiencySample]) -> Result<EfficiencyReport, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::EmptyList);
    }
    let n = samples.len() as f64;
    let mean = |f: &dyn Fn(&EfficiencySample) -> u64| samples.iter().map(|s| f(s) as f64).sum::<f64>() / n;
    let generation = mean(&|s| s.generation_ms) / 1000.0;
    let retrieval = mean(&|s| s.retrieval_ms) / 1000.0;
    Ok(EfficiencyReport {
        mean_input_tokens: mean(&|s| s.input_tokens as u64),
        mean_output_tokens: mean(&|s| s.output_tokens as u64),
        mean_response_time_s: mean(&|s| s.generation_ms + s.retrieval_ms) / 1000.0,
        mean_generation_time_s: generation,
        mean_retrieval_time_s: retrieval,
        n_samples: samples.len(),
    })
}
