use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SYSTEM_PREAMBLE: &str = "You are an energy-efficiency advisor for housing cooperatives. \
Answer the question using only the numbered context blocks. Cite the chunk ids you relied on. \
If the context does not contain the answer, reply exactly: \
\"I'm sorry, but the context provided does not contain information about <topic>.\" \
Do not guess or estimate numbers that are not in the context.";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub max_context_chunks: usize,
    pub min_retrieval_score: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            max_context_chunks: 5,
            min_retrieval_score: 0.25,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_context_chunks == 0 {
            return Err(Error::Config("max_context_chunks must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&self.min_retrieval_score) {
            return Err(Error::Config(format!(
                "min_retrieval_score {} outside [-1, 1]",
                self.min_retrieval_score
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub chunk_id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub system_preamble: String,
    /// In retrieval order (descending score).
    pub context_blocks: Vec<ContextBlock>,
    pub user_question: String,
}

impl AugmentedPrompt {
    pub fn is_context_empty(&self) -> bool {
        self.context_blocks.is_empty()
    }

    pub fn chunk_ids(&self) -> Vec<String> {
        self.context_blocks.iter().map(|b| b.chunk_id.clone()).collect()
    }

    /// Context and question as sent in the user turn:
    ///
    /// ```text
    /// Context:
    /// [1] chunk_id=doc-3#0 score=0.8123
    /// <chunk text>
    ///
    /// Question: <question>
    /// ```
    pub fn render_user_turn(&self) -> String {
        let mut out = String::from("Context:\n");
        for (i, block) in self.context_blocks.iter().enumerate() {
            let _ = writeln!(out, "[{}] chunk_id={} score={:.4}", i + 1, block.chunk_id, block.score);
            out.push_str(block.text.trim_end());
            out.push_str("\n\n");
        }
        let _ = write!(out, "Question: {}", self.user_question.trim());
        out
    }

    /// Preamble, blank line, user turn.
    pub fn render(&self) -> String {
        format!("{}\n\n{}", self.system_preamble, self.render_user_turn())
    }
}
