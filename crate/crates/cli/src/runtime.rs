//! Opens the stores and providers a command needs.

use std::sync::Arc;

use advisor_core::index::{Embedder, ExternalEmbedder, HashEmbedder, VectorIndex};
use advisor_core::knowledge::KnowledgeBase;
use advisor_core::provider::ExternalProviderConfig;
use advisor_core::rag::{ExternalGenerator, Generator, MockGenerator, RagPipeline};
use anyhow::{Context, Result};

use crate::config::{ProviderKind, ServiceConfig};

pub const EMBEDDING_ENV_PREFIX: &str = "ADVISOR_EMBEDDING";
pub const GENERATION_ENV_PREFIX: &str = "ADVISOR_GENERATION";

pub fn embedder(cfg: &ServiceConfig) -> Result<Arc<dyn Embedder>> {
    Ok(match cfg.embedder {
        ProviderKind::Mock => Arc::new(HashEmbedder::new(cfg.embedding_dims)?),
        ProviderKind::External => Arc::new(ExternalEmbedder::new(
            ExternalProviderConfig::from_env(EMBEDDING_ENV_PREFIX)?,
            cfg.embedding_dims,
        )),
    })
}

pub fn generator(cfg: &ServiceConfig) -> Result<Arc<dyn Generator>> {
    Ok(match cfg.generator {
        ProviderKind::Mock => Arc::new(MockGenerator),
        ProviderKind::External => Arc::new(ExternalGenerator::new(ExternalProviderConfig::from_env(
            GENERATION_ENV_PREFIX,
        )?)),
    })
}

pub fn open_knowledge(cfg: &ServiceConfig) -> Result<KnowledgeBase> {
    let dir = cfg.layout().knowledge();
    KnowledgeBase::open(&dir).with_context(|| format!("opening knowledge base {}", dir.display()))
}

/// Loads the saved index, or an empty one when nothing has been ingested.
pub fn open_index(cfg: &ServiceConfig) -> Result<VectorIndex> {
    let path = cfg.layout().index();
    if path.exists() {
        Ok(VectorIndex::load(&path)?)
    } else {
        Ok(VectorIndex::new(cfg.embedding_dims))
    }
}

/// The answer pipeline over whatever the data directory holds.
pub fn pipeline(cfg: &ServiceConfig) -> Result<Arc<RagPipeline>> {
    let kb = Arc::new(open_knowledge(cfg)?);
    let index = Arc::new(open_index(cfg)?);
    let pipeline = RagPipeline::new(kb, index, embedder(cfg)?, generator(cfg)?, cfg.generation)?
        .with_provider_retries(cfg.provider_retries);
    Ok(Arc::new(pipeline))
}

/// True when the data directory holds documents or building records.
pub fn has_data(pipeline: &RagPipeline) -> bool {
    let kb = pipeline.knowledge_base();
    kb.chunk_count() > 0 || !kb.building_ids().is_empty()
}
