//! Retrieval-augmented few-shot drafting of Architectural Design Decisions.
//!
//! ADRs are parsed into Context–Decision pairs ([`corpus`]), their contexts
//! embedded ([`embed`]) and indexed ([`vstore`]). For a new context the most
//! similar pairs become few-shot exemplars ([`prompt`]) for a generation
//! backend ([`genclient`]). [`pipeline`] wires these together for both
//! training-set export and online inference; [`metrics`] and [`harness`]
//! score and compare approaches.

pub mod clock;
pub mod corpus;
pub mod embed;
pub mod genclient;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod util;
pub mod vstore;
