//! Retrieval-augmented advisory service for building energy efficiency.
//!
//! The crate is organized around the request path:
//!
//! * [`knowledge`] - document corpus, chunking, and structured building data
//! * [`index`] - embedders and cosine top-k retrieval
//! * [`rag`] - question routing, structured answers, prompt assembly, generation
//! * [`queue`] - durable FIFO job queue, worker pool, result store
//! * [`channels`] - chat gateway and file-based email channel with rating capture
//! * [`conversation`] - transcript storage with flushing, retention, pseudonymization
//! * [`eval`] - lexical and embedding similarity metrics and numeric accuracy scoring

pub mod channels;
pub mod clock;
pub mod conversation;
pub mod error;
pub mod eval;
pub mod index;
pub mod knowledge;
pub mod provider;
pub mod queue;
pub mod rag;
pub mod text;

pub use error::{Error, Result};
