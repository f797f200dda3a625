//! Markdown ADR parsing.
//!
//! Sections are located by heading text, matched case-insensitively against a
//! fixed synonym table:
//!
//! | heading                          | normalized to |
//! |----------------------------------|---------------|
//! | `Context`                        | Context       |
//! | `Context and Problem Statement`  | Context       |
//! | `Decision`                       | Decision      |
//! | `Decision Outcome`               | Decision      |
//! | `Chosen option`                  | Decision      |
//!
//! A heading is an ATX line (`#` to `######` followed by a space or end of
//! line) or a line consisting only of a bold span (`**Context**`) naming a
//! known section. A section runs until the next heading of any level, so
//! MADR sub-sections such as `### Consequences` are dropped. Lines inside
//! fenced code blocks are never headings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::AdrRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdrTemplate {
    Nygard,
    Madr,
    #[default]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no recognizable Context heading")]
    MissingContext,
    #[error("no recognizable Decision heading")]
    MissingDecision,
    #[error("Context section is empty")]
    EmptyContext,
    #[error("Decision section is empty")]
    EmptyDecision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Context,
    Decision,
    Other,
}

struct HeadingMatch {
    section: Section,
    madr: bool,
}

fn normalize_heading(text: &str) -> String {
    let t = text.trim().trim_end_matches('#').trim();
    let t = strip_emphasis(t);
    t.trim_end_matches(':').trim().to_lowercase()
}

fn strip_emphasis(t: &str) -> &str {
    for marker in ["**", "__"] {
        if let Some(inner) = t.strip_prefix(marker).and_then(|s| s.strip_suffix(marker)) {
            return inner.trim();
        }
    }
    t
}

fn classify(name: &str) -> Option<HeadingMatch> {
    let (section, madr) = match name {
        "context" => (Section::Context, false),
        "context and problem statement" => (Section::Context, true),
        "decision" => (Section::Decision, false),
        "decision outcome" | "chosen option" => (Section::Decision, true),
        "status"
        | "consequences"
        | "references"
        | "decision drivers"
        | "considered options"
        | "pros and cons of the options"
        | "more information"
        | "links"
        | "notes"
        | "validation" => (Section::Other, false),
        _ => return None,
    };
    Some(HeadingMatch { section, madr })
}

/// Returns `Some(heading text)` for ATX headings and known bold-line headings.
fn heading_text(line: &str) -> Option<String> {
    let t = line.trim();
    let hashes = t.bytes().take_while(|&b| b == b'#').count();
    if (1..=6).contains(&hashes) {
        let rest = &t[hashes..];
        if rest.is_empty() || rest.starts_with([' ', '\t']) {
            return Some(normalize_heading(rest));
        }
        return None;
    }
    let bold = ["**", "__"]
        .iter()
        .any(|m| t.len() > 2 * m.len() && t.starts_with(m) && t.ends_with(m));
    if bold {
        let name = normalize_heading(t);
        if classify(&name).is_some() {
            return Some(name);
        }
    }
    None
}

/// Tracks fenced code blocks line by line.
#[derive(Default)]
pub(crate) struct FenceTracker {
    open: Option<(char, usize)>,
}

impl FenceTracker {
    /// Feeds one line; returns true when the line is part of a fence
    /// (including the delimiter lines themselves).
    pub(crate) fn feed(&mut self, line: &str) -> bool {
        let t = line.trim();
        let fence = t
            .chars()
            .next()
            .filter(|c| *c == '`' || *c == '~')
            .map(|c| (c, t.chars().take_while(|x| *x == c).count()))
            .filter(|(_, n)| *n >= 3);
        match (self.open, fence) {
            (None, Some(f)) => {
                self.open = Some(f);
                true
            }
            (Some((c, n)), Some((fc, fnum))) if c == fc && fnum >= n && t[fnum..].trim().is_empty() => {
                self.open = None;
                true
            }
            (Some(_), _) => true,
            (None, None) => false,
        }
    }

    pub(crate) fn is_open(&self) -> bool {
        self.open.is_some()
    }
}

pub(crate) fn has_unclosed_fence(text: &str) -> bool {
    let mut fences = FenceTracker::default();
    for line in text.lines() {
        fences.feed(line);
    }
    fences.is_open()
}

struct Extracted {
    body: String,
    madr: bool,
}

/// Parses one markdown ADR. The id is `{source_uri}#0`.
pub fn parse_adr(raw: &str, source_uri: &str) -> Result<AdrRecord, ParseError> {
    parse_adr_with_ordinal(raw, source_uri, 0)
}

pub fn parse_adr_bytes(raw: &[u8], source_uri: &str) -> Result<AdrRecord, ParseError> {
    parse_adr(&String::from_utf8_lossy(raw), source_uri)
}

pub fn parse_adr_with_ordinal(raw: &str, source_uri: &str, ordinal: usize) -> Result<AdrRecord, ParseError> {
    let raw = raw.strip_prefix('\u{feff}').unwrap_or(raw);
    let mut context: Option<(Extracted, Vec<&str>)> = None;
    let mut decision: Option<(Extracted, Vec<&str>)> = None;
    // Which slot, if any, the current lines go into.
    let mut current: Option<Section> = None;
    let mut fences = FenceTracker::default();

    for line in raw.lines() {
        let in_fence = fences.feed(line);
        let heading = if in_fence { None } else { heading_text(line) };
        if let Some(name) = heading {
            current = None;
            if let Some(m) = classify(&name) {
                let slot = match m.section {
                    Section::Context => &mut context,
                    Section::Decision => &mut decision,
                    Section::Other => continue,
                };
                if slot.is_none() {
                    *slot = Some((
                        Extracted {
                            body: String::new(),
                            madr: m.madr,
                        },
                        Vec::new(),
                    ));
                    current = Some(m.section);
                }
            }
            continue;
        }
        let slot = match current {
            Some(Section::Context) => &mut context,
            Some(Section::Decision) => &mut decision,
            _ => continue,
        };
        if let Some((_, lines)) = slot.as_mut() {
            lines.push(line);
        }
    }

    let finish = |slot: Option<(Extracted, Vec<&str>)>| {
        slot.map(|(mut e, lines)| {
            e.body = lines.join("\n").trim().to_string();
            e
        })
    };
    let context = finish(context).ok_or(ParseError::MissingContext)?;
    let decision = finish(decision).ok_or(ParseError::MissingDecision)?;
    if context.body.is_empty() {
        return Err(ParseError::EmptyContext);
    }
    if decision.body.is_empty() {
        return Err(ParseError::EmptyDecision);
    }
    let template = if context.madr || decision.madr {
        AdrTemplate::Madr
    } else {
        AdrTemplate::Nygard
    };
    Ok(AdrRecord {
        id: format!("{source_uri}#{ordinal}"),
        context: context.body,
        decision: decision.body,
        source_uri: source_uri.to_string(),
        template,
    })
}

/// Renders a record back to a minimal Nygard-style document that
/// [`parse_adr`] reads back to the same context and decision.
pub fn render_markdown(record: &AdrRecord) -> String {
    let context = format!("## Context\n\n{}\n", record.context);
    let decision = format!("## Decision\n\n{}\n", record.decision);
    // Only the final section may leave a fence open.
    if has_unclosed_fence(&record.context) {
        format!("{decision}\n{context}")
    } else {
        format!("{context}\n{decision}")
    }
}
