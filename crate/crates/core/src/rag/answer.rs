use serde::{Deserialize, Serialize};

pub const REFUSAL_PREFIX: &str = "I'm sorry, but the context provided does not contain information about ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Generated,
    Structured,
    Refusal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub query_id: String,
    pub text: String,
    pub kind: AnswerKind,
    #[serde(default)]
    pub cited_chunk_ids: Vec<String>,
    /// Operator-facing cause of a refusal. Never shown to the user.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Answer {
    pub fn refusal(query_id: impl Into<String>, topic: &str, reason: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            text: refusal_text(topic),
            kind: AnswerKind::Refusal,
            cited_chunk_ids: Vec::new(),
            reason: Some(reason.into()),
        }
    }

    pub fn structured(query_id: impl Into<String>, text: String) -> Self {
        Self {
            query_id: query_id.into(),
            text,
            kind: AnswerKind::Structured,
            cited_chunk_ids: Vec::new(),
            reason: None,
        }
    }

    pub fn is_refusal(&self) -> bool {
        self.kind == AnswerKind::Refusal
    }
}

pub fn refusal_text(topic: &str) -> String {
    format!("{REFUSAL_PREFIX}{topic}.")
}

pub fn is_refusal_text(text: &str) -> bool {
    text.trim_start().starts_with(REFUSAL_PREFIX)
}

/// Two decimals, dot separator, no grouping.
pub fn format_number(value: f64) -> String {
    format!("{value:.2}")
}

/// Turns a free-form question into the noun phrase used in a refusal,
/// e.g. "What is the EUI of my building?" becomes "the EUI of my building".
pub fn question_topic(question: &str) -> String {
    let first = question
        .split_inclusive(['?', '!', '\n'])
        .map(str::trim)
        .find(|s| !s.is_empty())
        .unwrap_or("");
    let mut topic = first.trim_end_matches(['?', '!', '.', ' ']).trim().to_string();

    let starts = |p: &str| topic.get(..p.len()).is_some_and(|s| s.eq_ignore_ascii_case(p));
    const DROP: [&str; 8] = [
        "what is ",
        "what are ",
        "what was ",
        "what were ",
        "what's ",
        "can you tell me ",
        "could you tell me ",
        "please tell me ",
    ];
    const HOW_TO: [&str; 6] = ["how do i ", "how can i ", "how should i ", "how do we ", "how can we ", "how should we "];
    if let Some(p) = DROP.iter().find(|p| starts(p)) {
        topic = topic[p.len()..].to_string();
    } else if let Some(p) = HOW_TO.iter().find(|p| starts(p)) {
        topic = format!("how to {}", &topic[p.len()..]);
    } else if let Some(first_char) = topic.chars().next() {
        // keep acronyms such as "EUI" intact
        let second_upper = topic.chars().nth(1).is_some_and(char::is_uppercase);
        if !second_upper {
            topic = first_char.to_lowercase().chain(topic.chars().skip(1)).collect();
        }
    }
    let topic = topic.trim();
    if topic.is_empty() {
        "this question".to_string()
    } else {
        topic.to_string()
    }
}
