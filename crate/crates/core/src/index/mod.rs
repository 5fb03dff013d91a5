//! Embeddings and exhaustive-scan nearest-neighbour retrieval.
//!
//! The index file is line-oriented JSON: a header line
//! `{"format":"advisor-vector-index","version":1,"dims":N}` followed by one
//! `{"chunk_id":..,"vector":[..]}` object per entry, in chunk_id order.
//! Floats are written in shortest round-trip form so a reload is bit-exact.

mod embed;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

pub use embed::{Embedder, EmbeddingVector, ExternalEmbedder, HashEmbedder, DEFAULT_DIMS};

use crate::error::{Error, Result};
use crate::knowledge::write_atomic;

const FORMAT_NAME: &str = "advisor-vector-index";
const FORMAT_VERSION: u32 = 1;

/// Cosine of the angle between two vectors, clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("cosine similarity is undefined for a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub chunk_id: String,
    pub score: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dims: usize,
}

#[derive(Debug)]
struct Stored {
    vector: EmbeddingVector,
    norm: f64,
}

/// Exhaustive-scan cosine index. Retrievals take a read lock and upserts a
/// write lock, so every query sees the index either before or after a
/// given upsert.
#[derive(Debug)]
pub struct VectorIndex {
    dims: usize,
    entries: RwLock<BTreeMap<String, Stored>>,
}

impl VectorIndex {
    pub fn new(dims: usize) -> Self {
        Self {
            dims,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, chunk_id: &str) -> bool {
        self.entries.read().unwrap().contains_key(chunk_id)
    }

    pub fn chunk_ids(&self) -> Vec<String> {
        self.entries.read().unwrap().keys().cloned().collect()
    }

    /// Inserts or replaces an entry. Returns whether the chunk was already
    /// indexed.
    pub fn upsert(&self, entry: IndexEntry) -> Result<bool> {
        if entry.vector.dims() != self.dims {
            return Err(Error::validation(format!(
                "vector for {} has {} dims, index expects {}",
                entry.chunk_id,
                entry.vector.dims(),
                self.dims
            )));
        }
        let norm = entry.vector.norm();
        if norm == 0.0 {
            return Err(Error::validation(format!("vector for {} is all zero", entry.chunk_id)));
        }
        let stored = Stored {
            vector: entry.vector,
            norm,
        };
        Ok(self.entries.write().unwrap().insert(entry.chunk_id, stored).is_some())
    }

    pub fn remove(&self, chunk_id: &str) -> bool {
        self.entries.write().unwrap().remove(chunk_id).is_some()
    }

    /// The `k` entries most similar to `query`, by descending score with
    /// ties broken by ascending chunk_id.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalResult>> {
        if k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if query.dims() != self.dims {
            return Err(Error::validation(format!(
                "query has {} dims, index expects {}",
                query.dims(),
                self.dims
            )));
        }
        let qnorm = query.norm();
        if qnorm == 0.0 {
            return Err(Error::validation("query vector is all zero"));
        }
        let entries = self.entries.read().unwrap();
        if entries.is_empty() {
            return Err(Error::EmptyIndex);
        }

        let q = query.values();
        let mut scored: Vec<RetrievalResult> = entries
            .iter()
            .map(|(id, stored)| {
                let dot: f64 = q.iter().zip(stored.vector.values()).map(|(a, b)| a * b).sum();
                RetrievalResult {
                    chunk_id: id.clone(),
                    score: (dot / (qnorm * stored.norm)).clamp(-1.0, 1.0),
                }
            })
            .collect();
        drop(entries);

        let order = |a: &RetrievalResult, b: &RetrievalResult| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.chunk_id.cmp(&b.chunk_id))
        };
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(scored)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let entries = self.entries.read().unwrap();
        write_atomic(path, |w| {
            let header = Header {
                format: FORMAT_NAME.into(),
                version: FORMAT_VERSION,
                dims: self.dims,
            };
            serde_json::to_writer(&mut *w, &header)?;
            w.write_all(b"\n")?;
            for (id, stored) in entries.iter() {
                serde_json::to_writer(
                    &mut *w,
                    &IndexEntry {
                        chunk_id: id.clone(),
                        vector: stored.vector.clone(),
                    },
                )?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing index header".into(),
        })??;
        let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported index format {} v{}", header.format, header.version),
            });
        }
        let index = Self::new(header.dims);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            index.upsert(entry)?;
        }
        Ok(index)
    }
}
