//! Document corpus and structured building energy data.
//!
//! The store keeps documents, their chunks, and per-building records in
//! memory behind a single reader-writer lock. Ingest is all-or-nothing: a
//! batch is parsed and validated completely, applied to a copy of the state,
//! persisted, and only then swapped in. Readers never observe a half-applied
//! batch; they block only for the duration of the swap.
//!
//! On disk (when opened on a directory):
//!
//! * `documents.jsonl` - the corpus, in the same JSON-lines format it is
//!   ingested from
//! * `chunks.jsonl` - chunks derived from the corpus
//! * `buildings.json` - building records with their readings

mod building;
mod chunk;
mod document;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

pub use building::{BuildingField, BuildingRecord, EndUse, EnergyClass, EnergyReading, FieldValue, Unit};
pub use chunk::{chunk_document, chunk_id, reassemble, DocumentChunk, DEFAULT_MAX_CHARS, DEFAULT_OVERLAP_CHARS};
pub use document::{CorpusFormat, Document, DocumentSource, QuestionCategory};

use crate::error::{Error, Result};

const DOCUMENTS_FILE: &str = "documents.jsonl";
const CHUNKS_FILE: &str = "chunks.jsonl";
const BUILDINGS_FILE: &str = "buildings.json";

#[derive(Debug, Clone, Default)]
struct State {
    /// Ingest order.
    documents: Vec<Document>,
    doc_index: HashMap<String, usize>,
    chunks: BTreeMap<String, DocumentChunk>,
    buildings: BTreeMap<u32, BuildingRecord>,
}

#[derive(Debug, Default)]
pub struct KnowledgeBase {
    dir: Option<PathBuf>,
    state: RwLock<State>,
}

impl KnowledgeBase {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a store rooted at `dir`, loading whatever state
    /// a previous run persisted there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        let mut state = State::default();

        let docs_path = dir.join(DOCUMENTS_FILE);
        if docs_path.exists() {
            let file = File::open(&docs_path).map_err(|e| Error::file(&docs_path, e))?;
            for (_, doc) in document::parse_json_lines(BufReader::new(file))? {
                state.doc_index.insert(doc.doc_id.clone(), state.documents.len());
                state.documents.push(doc);
            }
        }
        let chunks_path = dir.join(CHUNKS_FILE);
        if chunks_path.exists() {
            let file = File::open(&chunks_path).map_err(|e| Error::file(&chunks_path, e))?;
            for line in BufReader::new(file).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let chunk: DocumentChunk = serde_json::from_str(&line)?;
                state.chunks.insert(chunk.chunk_id.clone(), chunk);
            }
        }
        let buildings_path = dir.join(BUILDINGS_FILE);
        if buildings_path.exists() {
            let file = File::open(&buildings_path).map_err(|e| Error::file(&buildings_path, e))?;
            let records: Vec<BuildingRecord> = serde_json::from_reader(BufReader::new(file))?;
            state.buildings = records.into_iter().map(|b| (b.building_id, b)).collect();
        }

        Ok(Self {
            dir: Some(dir),
            state: RwLock::new(state),
        })
    }

    /// Ingests a corpus file. Returns the number of documents added;
    /// documents identical to stored ones are skipped.
    pub fn ingest_documents(&self, path: &Path, format: CorpusFormat) -> Result<usize> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        self.ingest_documents_from(BufReader::new(file), format)
    }

    pub fn ingest_documents_from<R: BufRead>(&self, reader: R, format: CorpusFormat) -> Result<usize> {
        let batch = match format {
            CorpusFormat::JsonLines => document::parse_json_lines(reader)?,
        };
        let mut guard = self.state.write().unwrap();
        let mut fresh = Vec::with_capacity(batch.len());
        for (line, doc) in batch {
            match guard.doc_index.get(&doc.doc_id) {
                // re-ingesting an unchanged document is a no-op
                Some(&i) if guard.documents[i] == doc => {}
                Some(_) => {
                    return Err(Error::Conflict(format!(
                        "doc_id {:?} on line {line} already exists in the knowledge base with different content",
                        doc.doc_id
                    )))
                }
                None => fresh.push(doc),
            }
        }
        if fresh.is_empty() {
            return Ok(0);
        }
        let mut next = guard.clone();
        let count = fresh.len();
        for doc in fresh {
            next.doc_index.insert(doc.doc_id.clone(), next.documents.len());
            next.documents.push(doc);
        }
        self.persist(&next)?;
        *guard = next;
        Ok(count)
    }

    /// Writes every document in ingest order in corpus format.
    pub fn export_documents<W: Write>(&self, mut writer: W) -> Result<()> {
        let state = self.state.read().unwrap();
        for doc in &state.documents {
            serde_json::to_writer(&mut writer, doc)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn documents(&self) -> Vec<Document> {
        self.state.read().unwrap().documents.clone()
    }

    pub fn document(&self, doc_id: &str) -> Option<Document> {
        let state = self.state.read().unwrap();
        state.doc_index.get(doc_id).map(|&i| state.documents[i].clone())
    }

    /// Re-chunks the whole corpus, replacing any previous chunk set.
    pub fn rebuild_chunks(&self, max_chars: usize, overlap_chars: usize) -> Result<Vec<DocumentChunk>> {
        let mut guard = self.state.write().unwrap();
        let mut all = Vec::new();
        for doc in &guard.documents {
            all.extend(chunk_document(doc, max_chars, overlap_chars)?);
        }
        let mut next = guard.clone();
        next.chunks = all.iter().map(|c| (c.chunk_id.clone(), c.clone())).collect();
        self.persist(&next)?;
        *guard = next;
        Ok(all)
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<DocumentChunk> {
        self.state.read().unwrap().chunks.get(chunk_id).cloned()
    }

    pub fn chunk_count(&self) -> usize {
        self.state.read().unwrap().chunks.len()
    }

    /// Loads `buildings.csv` and (if present) `readings.csv` from `dir`.
    /// Returns the number of buildings held after the ingest.
    pub fn ingest_building_data(&self, dir: &Path) -> Result<usize> {
        let buildings_path = dir.join("buildings.csv");
        let buildings = File::open(&buildings_path).map_err(|e| Error::file(&buildings_path, e))?;
        let readings_path = dir.join("readings.csv");
        let readings = if readings_path.exists() {
            Some(File::open(&readings_path).map_err(|e| Error::file(&readings_path, e))?)
        } else {
            None
        };
        self.ingest_building_data_from(buildings, readings)
    }

    /// Records replace any stored record with the same id. Readings may only
    /// reference buildings listed in the same batch.
    pub fn ingest_building_data_from<B: Read, R: Read>(&self, buildings: B, readings: Option<R>) -> Result<usize> {
        let mut records: BTreeMap<u32, BuildingRecord> = building::parse_buildings(buildings)?
            .into_iter()
            .map(|b| (b.building_id, b))
            .collect();
        if let Some(readings) = readings {
            for reading in building::parse_readings(readings)? {
                let record = records.get_mut(&reading.building_id).ok_or_else(|| {
                    Error::validation(format!(
                        "readings.csv references building {} which is not in buildings.csv",
                        reading.building_id
                    ))
                })?;
                record.readings.push(reading);
            }
        }
        for record in records.values_mut() {
            record.readings.sort_by_key(|r| (r.year, r.month, r.end_use));
        }

        let mut guard = self.state.write().unwrap();
        let mut next = guard.clone();
        next.buildings.extend(records);
        self.persist(&next)?;
        let count = next.buildings.len();
        *guard = next;
        Ok(count)
    }

    pub fn building(&self, building_id: u32) -> Result<BuildingRecord> {
        self.state
            .read()
            .unwrap()
            .buildings
            .get(&building_id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("building id {building_id}")))
    }

    pub fn building_ids(&self) -> Vec<u32> {
        self.state.read().unwrap().buildings.keys().copied().collect()
    }

    pub fn lookup_building_field(&self, building_id: u32, field: BuildingField) -> Result<FieldValue> {
        let state = self.state.read().unwrap();
        let record = state
            .buildings
            .get(&building_id)
            .ok_or_else(|| Error::NotFound(format!("building id {building_id}")))?;
        record
            .field(field)
            .ok_or_else(|| Error::DataUnavailable(format!("{} for building id {building_id}", field.key())))
    }

    /// Per-end-use consumption for a single month.
    pub fn monthly_breakdown(&self, building_id: u32, year: i32, month: u32) -> Result<BTreeMap<EndUse, f64>> {
        let state = self.state.read().unwrap();
        let record = state
            .buildings
            .get(&building_id)
            .ok_or_else(|| Error::NotFound(format!("building id {building_id}")))?;
        let breakdown = record.month(year, month);
        if breakdown.is_empty() {
            return Err(Error::DataUnavailable(format!(
                "readings for building id {building_id} in {year}-{month:02}"
            )));
        }
        Ok(breakdown)
    }

    fn persist(&self, state: &State) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        write_atomic(&dir.join(DOCUMENTS_FILE), |w| {
            for doc in &state.documents {
                serde_json::to_writer(&mut *w, doc)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
        write_atomic(&dir.join(CHUNKS_FILE), |w| {
            for chunk in state.chunks.values() {
                serde_json::to_writer(&mut *w, chunk)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
        write_atomic(&dir.join(BUILDINGS_FILE), |w| {
            let records: Vec<&BuildingRecord> = state.buildings.values().collect();
            serde_json::to_writer(&mut *w, &records)?;
            Ok(())
        })
    }
}

/// Writes to a sibling temp file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| Error::file(&tmp, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    let file = w.into_inner().map_err(|e| Error::file(&tmp, e.into_error()))?;
    file.sync_all().map_err(|e| Error::file(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::file(path, e))
}
