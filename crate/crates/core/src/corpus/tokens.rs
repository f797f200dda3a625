//! Deterministic token counting.
//!
//! The bundled `word_punct` profile splits on whitespace, keeps maximal runs
//! of alphanumeric characters (plus `_`) together as one token, and emits
//! every other non-whitespace character as a token of its own. So
//! `"We will use Jest."` segments into `We`, `will`, `use`, `Jest`, `.`.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Selects a segmentation scheme. Counts are stable for a fixed profile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerProfile {
    /// Whitespace plus punctuation segmentation.
    #[default]
    WordPunct,
    /// Plain whitespace splitting.
    Whitespace,
}

impl fmt::Display for TokenizerProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerProfile::WordPunct => f.write_str("word_punct"),
            TokenizerProfile::Whitespace => f.write_str("whitespace"),
        }
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Iterator over the tokens of `text` under `profile`, borrowing from the input.
pub fn segment(text: &str, profile: TokenizerProfile) -> Segments<'_> {
    Segments { rest: text, profile }
}

pub struct Segments<'a> {
    rest: &'a str,
    profile: TokenizerProfile,
}

impl<'a> Iterator for Segments<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let trimmed = self.rest.trim_start();
        let first = trimmed.chars().next()?;
        let end = match self.profile {
            TokenizerProfile::Whitespace => trimmed
                .char_indices()
                .find(|(_, c)| c.is_whitespace())
                .map_or(trimmed.len(), |(i, _)| i),
            TokenizerProfile::WordPunct if is_word_char(first) => trimmed
                .char_indices()
                .find(|(_, c)| !is_word_char(*c))
                .map_or(trimmed.len(), |(i, _)| i),
            TokenizerProfile::WordPunct => first.len_utf8(),
        };
        let (token, rest) = trimmed.split_at(end);
        self.rest = rest;
        Some(token)
    }
}

pub fn count_tokens(text: &str, profile: TokenizerProfile) -> usize {
    segment(text, profile).count()
}

/// Lowercased tokens, the form used for metric computation and hashing.
pub fn lowercase_tokens(text: &str, profile: TokenizerProfile) -> Vec<String> {
    segment(text, profile).map(str::to_lowercase).collect()
}
