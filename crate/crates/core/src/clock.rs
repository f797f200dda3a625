//! Wall-clock access for latency and timestamps, with a frozen variant for
//! reproducible runs: a frozen clock never advances, so every measured
//! latency is 0 and every timestamp is the pinned value.

use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    #[default]
    System,
    Frozen(String),
}

#[derive(Debug, Clone, Copy)]
pub struct Stopwatch(Option<Instant>);

impl Stopwatch {
    pub fn elapsed_ms(&self) -> u64 {
        self.0
            .map_or(0, |t| u64::try_from(t.elapsed().as_millis()).unwrap_or(u64::MAX))
    }
}

impl Clock {
    pub fn start(&self) -> Stopwatch {
        match self {
            Clock::System => Stopwatch(Some(Instant::now())),
            Clock::Frozen(_) => Stopwatch(None),
        }
    }

    /// RFC 3339, second precision, UTC.
    pub fn timestamp(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            Clock::Frozen(ts) => ts.clone(),
        }
    }
}
