use std::io::Write;
use std::path::PathBuf;

use advisor_core::knowledge::CorpusFormat;
use advisor_core::rag::index_corpus;
use anyhow::Result;
use serde::Serialize;

use crate::config::ServiceConfig;
use crate::runtime;

#[derive(Debug, Clone, Default)]
pub struct IngestArgs {
    pub corpus: Option<PathBuf>,
    pub buildings: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub documents_added: usize,
    pub documents_total: usize,
    pub chunks_indexed: usize,
    pub buildings: usize,
}

/// Loads documents and building data, then rebuilds chunks and the index so
/// they mirror the stored corpus.
pub fn ingest(cfg: &ServiceConfig, args: &IngestArgs) -> Result<IngestSummary> {
    let kb = runtime::open_knowledge(cfg)?;
    let documents_added = match &args.corpus {
        Some(path) => kb.ingest_documents(path, CorpusFormat::JsonLines)?,
        None => 0,
    };
    let buildings = match &args.buildings {
        Some(dir) => kb.ingest_building_data(dir)?,
        None => kb.building_ids().len(),
    };
    let embedder = runtime::embedder(cfg)?;
    let index = runtime::open_index(cfg)?;
    let index = if index.dims() == embedder.dims() {
        index
    } else {
        log::warn!(
            "index holds {}-dim vectors, embedder produces {}; rebuilding from scratch",
            index.dims(),
            embedder.dims()
        );
        advisor_core::index::VectorIndex::new(embedder.dims())
    };
    let chunks_indexed = index_corpus(&kb, &index, embedder.as_ref(), cfg.chunk_max_chars, cfg.chunk_overlap_chars)?;
    index.save(&cfg.layout().index())?;
    Ok(IngestSummary {
        documents_added,
        documents_total: kb.documents().len(),
        chunks_indexed,
        buildings,
    })
}

pub fn run(cfg: &ServiceConfig, args: &IngestArgs, json: bool, out: &mut dyn Write) -> Result<u8> {
    let summary = ingest(cfg, args)?;
    if json {
        writeln!(out, "{}", serde_json::to_string(&summary)?)?;
    } else {
        writeln!(
            out,
            "documents: {} added, {} total",
            summary.documents_added, summary.documents_total
        )?;
        writeln!(out, "chunks indexed: {}", summary.chunks_indexed)?;
        writeln!(out, "buildings: {}", summary.buildings)?;
    }
    Ok(0)
}
