use crate::corpus::{segment, TokenizerProfile};
use crate::util::fnv1a64;

use super::{EmbedError, Embedder, EmbedderProfile, EmbeddingVector};

/// Feature-hashed bag of lowercase tokens: bucket = FNV-1a-64(token) mod dim,
/// one count per occurrence, then L2 normalization.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    profile: EmbedderProfile,
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbedError> {
        let profile = EmbedderProfile::hashed_local(dim);
        profile.validate()?;
        Ok(HashedEmbedder { profile })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.to_lowercase().as_bytes()) % self.profile.dim as u64) as usize
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut counts = vec![0f32; self.profile.dim];
        let mut any = false;
        for token in segment(text, TokenizerProfile::WordPunct) {
            counts[self.bucket(token)] += 1.0;
            any = true;
        }
        if !any {
            return Err(EmbedError::EmptyInput);
        }
        EmbeddingVector::new(counts)
    }
}

impl Embedder for HashedEmbedder {
    fn profile(&self) -> &EmbedderProfile {
        &self.profile
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}
