use serde::{Deserialize, Serialize};

use super::Document;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_CHARS: usize = 1200;
pub const DEFAULT_OVERLAP_CHARS: usize = 120;

/// A contiguous slice of a document body. `char_span` is a half-open range
/// of character (not byte) offsets into the parent body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub char_span: (usize, usize),
}

pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    format!("{doc_id}#{ordinal}")
}

/// Splits a body into windows of at most `max_chars` characters, each
/// window starting `overlap_chars` before the end of the previous one.
pub fn chunk_document(doc: &Document, max_chars: usize, overlap_chars: usize) -> Result<Vec<DocumentChunk>> {
    if max_chars == 0 {
        return Err(Error::Config("max_chars must be positive".into()));
    }
    if overlap_chars >= max_chars {
        return Err(Error::Config(format!(
            "overlap_chars ({overlap_chars}) must be smaller than max_chars ({max_chars})"
        )));
    }
    if doc.body.is_empty() {
        return Err(Error::validation(format!("document {} has an empty body", doc.doc_id)));
    }

    let chars: Vec<char> = doc.body.chars().collect();
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + max_chars).min(chars.len());
        let ordinal = chunks.len();
        chunks.push(DocumentChunk {
            chunk_id: chunk_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            text: chars[start..end].iter().collect(),
            char_span: (start, end),
        });
        if end == chars.len() {
            break;
        }
        start = end - overlap_chars;
    }
    Ok(chunks)
}

/// Inverse of [`chunk_document`]: drops the shared prefix of every chunk
/// after the first and concatenates.
pub fn reassemble(chunks: &[DocumentChunk]) -> String {
    let mut out = String::new();
    let mut covered: usize = 0;
    for chunk in chunks {
        let (start, _) = chunk.char_span;
        out.extend(chunk.text.chars().skip(covered.saturating_sub(start)));
        covered = chunk.char_span.1;
    }
    out
}
