use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::index::{cosine_similarity, Embedder};
use crate::text;

pub const BUCKET_COUNT: usize = 5;
/// Lower edges of buckets 2..=5. Buckets are half-open except the last,
/// which includes 1.0.
pub const BUCKET_EDGES: [f64; BUCKET_COUNT - 1] = [0.2, 0.4, 0.6, 0.8];
pub const BUCKET_LABELS: [&str; BUCKET_COUNT] = ["0.0-0.2", "0.2-0.4", "0.4-0.6", "0.6-0.8", "0.8-1.0"];

pub fn tokenize(text: &str) -> BTreeSet<String> {
    text::words(text).collect()
}

/// Word-set Jaccard similarity.
pub fn jaccard(a: &str, b: &str) -> Result<f64> {
    let (ta, tb) = (tokenize(a), tokenize(b));
    if ta.is_empty() && tb.is_empty() {
        return Err(Error::UndefinedInput("both texts have no words".into()));
    }
    let inter = ta.intersection(&tb).count();
    let union = ta.len() + tb.len() - inter;
    Ok(inter as f64 / union as f64)
}

/// Cosine similarity of the two texts' embeddings.
pub fn cosine_eval(a: &str, b: &str, embedder: &dyn Embedder) -> Result<f64> {
    let (ea, eb) = (embedder.embed(a)?, embedder.embed(b)?);
    cosine_similarity(ea.values(), eb.values())
}

pub fn bucket_index(score: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::validation(format!("score {score} outside [0, 1]")));
    }
    Ok(BUCKET_EDGES.iter().filter(|&&edge| score >= edge).count())
}

pub fn bucket_scores(scores: &[f64]) -> Result<[usize; BUCKET_COUNT]> {
    let mut counts = [0; BUCKET_COUNT];
    for &s in scores {
        counts[bucket_index(s)?] += 1;
    }
    Ok(counts)
}
