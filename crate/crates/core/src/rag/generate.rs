use serde_json::json;

use super::prompt::{AugmentedPrompt, GenerationConfig};
use crate::error::{Error, Result};
use crate::provider::ExternalProviderConfig;

pub const MOCK_ANSWER_PREFIX: &str = "Based on the available information: ";

/// A language-model backend that turns an augmented prompt into text.
pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &AugmentedPrompt, config: &GenerationConfig) -> Result<String>;
}

/// Extractive stand-in: answers with the highest-scoring block verbatim.
#[derive(Debug, Default, Clone, Copy)]
pub struct MockGenerator;

impl Generator for MockGenerator {
    fn generate(&self, prompt: &AugmentedPrompt, _config: &GenerationConfig) -> Result<String> {
        let top = prompt
            .context_blocks
            .first()
            .ok_or_else(|| Error::provider("mock generator called without context", false))?;
        Ok(format!("{MOCK_ANSWER_PREFIX}{}", top.text.trim()))
    }
}

/// OpenAI-style chat-completions backend.
pub struct ExternalGenerator {
    config: ExternalProviderConfig,
}

impl ExternalGenerator {
    pub fn new(config: ExternalProviderConfig) -> Self {
        Self { config }
    }
}

impl Generator for ExternalGenerator {
    fn generate(&self, prompt: &AugmentedPrompt, config: &GenerationConfig) -> Result<String> {
        let body = self.config.post_json(json!({
            "model": self.config.model,
            "temperature": config.temperature,
            "messages": [
                {"role": "system", "content": prompt.system_preamble},
                {"role": "user", "content": prompt.render_user_turn()},
            ],
        }))?;
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::provider("response has no choices[0].message.content", false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::test_server::serve_once;
    use crate::rag::prompt::{ContextBlock, SYSTEM_PREAMBLE};
    use std::time::Duration;

    fn prompt() -> AugmentedPrompt {
        AugmentedPrompt {
            system_preamble: SYSTEM_PREAMBLE.into(),
            context_blocks: vec![ContextBlock {
                chunk_id: "d#0".into(),
                text: "Balance the radiators. ".into(),
                score: 0.7,
            }],
            user_question: "How do I fix cold radiators?".into(),
        }
    }

    #[test]
    fn mock_is_extractive() {
        let text = MockGenerator.generate(&prompt(), &GenerationConfig::default()).unwrap();
        assert_eq!(text, "Based on the available information: Balance the radiators.");
    }

    #[test]
    fn external_sends_temperature_and_reads_content() {
        let (url, requests) = serve_once(200, r#"{"choices":[{"message":{"role":"assistant","content":" Balance them. "}}]}"#);
        let gen = ExternalGenerator::new(ExternalProviderConfig {
            endpoint: url,
            model: "m".into(),
            api_key: "k".into(),
            timeout: Duration::from_secs(5),
        });
        let cfg = GenerationConfig::default();
        assert_eq!(gen.generate(&prompt(), &cfg).unwrap(), "Balance them.");
        let sent: serde_json::Value = serde_json::from_str(&requests.recv().unwrap()).unwrap();
        assert_eq!(sent["temperature"], 0.1);
        assert!(sent["messages"][1]["content"].as_str().unwrap().contains("chunk_id=d#0"));
    }

    #[test]
    fn external_rate_limit_is_retryable() {
        let (url, _) = serve_once(429, "{}");
        let gen = ExternalGenerator::new(ExternalProviderConfig {
            endpoint: url,
            model: "m".into(),
            api_key: "k".into(),
            timeout: Duration::from_secs(5),
        });
        let err = gen.generate(&prompt(), &GenerationConfig::default()).unwrap_err();
        assert!(err.is_retryable());
    }
}
