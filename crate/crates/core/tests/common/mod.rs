#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use advisor_core::index::{HashEmbedder, VectorIndex, DEFAULT_DIMS};
use advisor_core::knowledge::{CorpusFormat, KnowledgeBase, DEFAULT_MAX_CHARS, DEFAULT_OVERLAP_CHARS};
use advisor_core::rag::{index_corpus, GenerationConfig, MockGenerator, RagPipeline};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Pipeline over the shipped corpus and building data, mock providers.
pub fn fixture_pipeline() -> Arc<RagPipeline> {
    let kb = KnowledgeBase::in_memory();
    kb.ingest_documents(&fixtures().join("corpus.jsonl"), CorpusFormat::JsonLines)
        .unwrap();
    kb.ingest_building_data(&fixtures().join("buildings")).unwrap();
    let embedder = Arc::new(HashEmbedder::new(DEFAULT_DIMS).unwrap());
    let index = VectorIndex::new(DEFAULT_DIMS);
    index_corpus(&kb, &index, embedder.as_ref(), DEFAULT_MAX_CHARS, DEFAULT_OVERLAP_CHARS).unwrap();
    Arc::new(
        RagPipeline::new(
            Arc::new(kb),
            Arc::new(index),
            embedder,
            Arc::new(MockGenerator),
            GenerationConfig::default(),
        )
        .unwrap(),
    )
}
