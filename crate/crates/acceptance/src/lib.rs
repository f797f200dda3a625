//! Synthetic corpora for the acceptance checks.

use draft_core::corpus::{AdrRecord, AdrTemplate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "cache",
    "queue",
    "database",
    "gateway",
    "registry",
    "scheduler",
    "logging",
    "metrics",
    "tracing",
    "storage",
    "frontend",
    "backend",
    "pipeline",
    "deployment",
    "secrets",
    "search",
    "billing",
    "session",
    "mobile",
    "schema",
    "latency",
    "throughput",
    "cost",
    "security",
    "compliance",
    "migration",
    "vendor",
    "cluster",
    "region",
    "team",
];

const CHOICES: &[&str] = &[
    "Postgres",
    "Redis",
    "Kafka",
    "RabbitMQ",
    "Kubernetes",
    "Terraform",
    "Jest",
    "Yarn",
    "Vault",
    "Grafana",
    "Elasticsearch",
    "GraphQL",
    "gRPC",
    "S3",
    "Nginx",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` records with unique ids and unique contexts. Every context carries an
/// index token, so no two contexts share a bag of words.
pub fn synthetic_records(n: usize, seed: u64) -> Vec<AdrRecord> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let len = r.random_range(4..16);
            let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut r).unwrap()).collect();
            let choice = CHOICES.choose(&mut r).unwrap();
            AdrRecord {
                id: format!("adr/{i:05}.md#0"),
                context: format!("Service s{i} needs a decision about {}.", words.join(" ")),
                decision: format!("We will use {choice} for the {} of s{i}.", words[0]),
                source_uri: format!("adr/{i:05}.md"),
                template: AdrTemplate::Nygard,
            }
        })
        .collect()
}

/// Like [`synthetic_records`] but some records copy an earlier context
/// verbatim, which makes self-matches and ties likely.
pub fn records_with_duplicates(n: usize, seed: u64) -> Vec<AdrRecord> {
    let mut records = synthetic_records(n, seed);
    let mut r = rng(seed ^ 0x5eed);
    for i in 1..records.len() {
        if r.random_bool(0.3) {
            let j = r.random_range(0..i);
            records[i].context = records[j].context.clone();
        }
    }
    records
}
