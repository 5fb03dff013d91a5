use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::provider::ExternalProviderConfig;
use crate::text;

pub const DEFAULT_DIMS: usize = 256;

/// A dense vector of finite components.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("embedding must have at least one dimension"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("embedding component {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl fmt::Debug for EmbeddingVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EmbeddingVector(dims={}, norm={:.6})", self.dims(), self.norm())
    }
}

pub trait Embedder: Send + Sync {
    fn dims(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::validation("cannot embed empty text"));
    }
    Ok(())
}

/// Deterministic bag-of-words embedder: every lowercase word is hashed
/// (64-bit FNV-1a) into one of `dims` buckets, bucket counts are
/// accumulated, and the result is L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dims: usize,
}

impl HashEmbedder {
    pub fn new(dims: usize) -> Result<Self> {
        if dims == 0 {
            return Err(Error::Config("embedding dims must be positive".into()));
        }
        Ok(Self { dims })
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dims as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dims: DEFAULT_DIMS }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

impl Embedder for HashEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        require_text(text)?;
        let mut counts = vec![0.0; self.dims];
        let mut any = false;
        for word in text::words(text) {
            counts[self.bucket(&word)] += 1.0;
            any = true;
        }
        if !any {
            // text made only of punctuation: fall back to the raw pieces
            for raw in text.split_whitespace() {
                counts[self.bucket(&raw.to_lowercase())] += 1.0;
            }
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        counts.iter_mut().for_each(|c| *c /= norm);
        EmbeddingVector::new(counts)
    }
}

/// Embedder backed by an OpenAI-style `/embeddings` HTTP endpoint.
pub struct ExternalEmbedder {
    config: ExternalProviderConfig,
    dims: usize,
}

impl ExternalEmbedder {
    pub fn new(config: ExternalProviderConfig, dims: usize) -> Self {
        Self { config, dims }
    }
}

impl Embedder for ExternalEmbedder {
    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        require_text(text)?;
        let body = self.config.post_json(json!({
            "model": self.config.model,
            "input": text,
        }))?;
        let values: Vec<f64> = body
            .pointer("/data/0/embedding")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| Error::provider("response has no data[0].embedding array", false))?;
        if values.len() != self.dims {
            return Err(Error::provider(
                format!("embedding has {} dims, index expects {}", values.len(), self.dims),
                false,
            ));
        }
        EmbeddingVector::new(values).map_err(|e| Error::provider(e.to_string(), false))
    }
}
