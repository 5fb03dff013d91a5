//! Question answering.
//!
//! Every question is first offered to the structured-query grammar. A
//! building-specific question is answered straight from the knowledge base
//! (or refused when the data is missing or the question needs aggregation
//! over several periods). Everything else goes through retrieval: the
//! question is embedded, the closest chunks above the score threshold form
//! the context, and the generator writes the answer. An empty context is a
//! refusal and the generator is never called for it.

mod answer;
mod generate;
mod prompt;
mod query;
mod structured;

use std::collections::HashSet;
use std::sync::Arc;

pub use answer::{format_number, is_refusal_text, question_topic, refusal_text, Answer, AnswerKind, REFUSAL_PREFIX};
pub use generate::{ExternalGenerator, Generator, MockGenerator, MOCK_ANSWER_PREFIX};
pub use prompt::{AugmentedPrompt, ContextBlock, GenerationConfig, SYSTEM_PREAMBLE};
pub use query::{parse_structured_query, StructuredQuery, MONTH_NAMES};
pub use structured::query_topic;

use crate::error::{Error, Result};
use crate::index::{Embedder, IndexEntry, VectorIndex};
use crate::knowledge::KnowledgeBase;

/// Chunks the whole corpus, embeds every chunk and makes the index mirror
/// the chunk set exactly. Returns the number of indexed chunks.
pub fn index_corpus(
    kb: &KnowledgeBase,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    max_chars: usize,
    overlap_chars: usize,
) -> Result<usize> {
    let chunks = kb.rebuild_chunks(max_chars, overlap_chars)?;
    let live: HashSet<&str> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
    for stale in index.chunk_ids().into_iter().filter(|id| !live.contains(id.as_str())) {
        index.remove(&stale);
    }
    for chunk in &chunks {
        let vector = embedder.embed(&chunk.text)?;
        index.upsert(IndexEntry {
            chunk_id: chunk.chunk_id.clone(),
            vector,
        })?;
    }
    Ok(chunks.len())
}

pub struct RagPipeline {
    kb: Arc<KnowledgeBase>,
    index: Arc<VectorIndex>,
    embedder: Arc<dyn Embedder>,
    generator: Arc<dyn Generator>,
    config: GenerationConfig,
    provider_retries: u32,
}

impl RagPipeline {
    pub fn new(
        kb: Arc<KnowledgeBase>,
        index: Arc<VectorIndex>,
        embedder: Arc<dyn Embedder>,
        generator: Arc<dyn Generator>,
        config: GenerationConfig,
    ) -> Result<Self> {
        config.validate()?;
        if embedder.dims() != index.dims() {
            return Err(Error::Config(format!(
                "embedder produces {} dims but the index holds {}",
                embedder.dims(),
                index.dims()
            )));
        }
        Ok(Self {
            kb,
            index,
            embedder,
            generator,
            config,
            provider_retries: 2,
        })
    }

    /// How many times a retryable provider failure is retried inside one
    /// call before it is returned to the caller.
    pub fn with_provider_retries(mut self, retries: u32) -> Self {
        self.provider_retries = retries;
        self
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn knowledge_base(&self) -> &KnowledgeBase {
        &self.kb
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn answer_structured(&self, q: &StructuredQuery, query_id: &str) -> Answer {
        structured::answer_structured(&self.kb, q, query_id)
    }

    /// Retrieves up to `max_context_chunks` blocks, keeping only those at
    /// or above `min_retrieval_score`.
    pub fn build_augmented_prompt(&self, question: &str) -> Result<AugmentedPrompt> {
        let query = self.embedder.embed(question)?;
        let hits = self.index.top_k(&query, self.config.max_context_chunks)?;
        let mut blocks = Vec::with_capacity(hits.len());
        for hit in hits {
            if hit.score < self.config.min_retrieval_score {
                continue;
            }
            match self.kb.chunk(&hit.chunk_id) {
                Some(chunk) => blocks.push(ContextBlock {
                    chunk_id: hit.chunk_id,
                    text: chunk.text,
                    score: hit.score,
                }),
                None => log::warn!("indexed chunk {} has no text in the knowledge base", hit.chunk_id),
            }
        }
        Ok(AugmentedPrompt {
            system_preamble: SYSTEM_PREAMBLE.to_string(),
            context_blocks: blocks,
            user_question: question.to_string(),
        })
    }

    pub fn generate_answer(&self, prompt: &AugmentedPrompt, query_id: &str) -> Result<Answer> {
        if prompt.is_context_empty() {
            return Ok(Answer::refusal(
                query_id,
                &question_topic(&prompt.user_question),
                "no retrieved context above the score threshold",
            ));
        }
        let text = self.generator.generate(prompt, &self.config)?;
        if is_refusal_text(&text) {
            return Ok(Answer {
                query_id: query_id.to_string(),
                text,
                kind: AnswerKind::Refusal,
                cited_chunk_ids: Vec::new(),
                reason: Some("generator declined to answer from the context".into()),
            });
        }
        Ok(Answer {
            query_id: query_id.to_string(),
            text,
            kind: AnswerKind::Generated,
            cited_chunk_ids: prompt.chunk_ids(),
            reason: None,
        })
    }

    /// Routes and answers one question. Missing data and empty context are
    /// refusals; only provider failures that survive the retries are errors.
    pub fn answer_query(&self, query_id: &str, question: &str) -> Result<Answer> {
        if let Some(q) = parse_structured_query(question) {
            return Ok(self.answer_structured(&q, query_id));
        }
        let topic = question_topic(question);
        let mut attempt = 0;
        loop {
            let result = self
                .build_augmented_prompt(question)
                .and_then(|prompt| self.generate_answer(&prompt, query_id));
            match result {
                Ok(answer) => return Ok(answer),
                Err(Error::EmptyIndex) => return Ok(Answer::refusal(query_id, &topic, "knowledge base is empty")),
                Err(Error::Validation(msg)) => return Ok(Answer::refusal(query_id, &topic, msg)),
                Err(e) if e.is_retryable() && attempt < self.provider_retries => {
                    attempt += 1;
                    log::warn!("query {query_id}: retrying after provider error ({attempt}): {e}");
                }
                Err(e) => return Err(e),
            }
        }
    }
}
