//! Settings shared by the HTTP-backed embedding and generation providers.

use std::env;
use std::time::Duration;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub timeout: Duration,
}

impl ExternalProviderConfig {
    /// Reads `{prefix}_ENDPOINT`, `{prefix}_MODEL` and `{prefix}_KEY`.
    pub fn from_env(prefix: &str) -> Result<Self> {
        let var = |suffix: &str| {
            let name = format!("{prefix}_{suffix}");
            env::var(&name)
                .ok()
                .filter(|v| !v.trim().is_empty())
                .ok_or_else(|| Error::Config(format!("environment variable {name} is required for the external provider")))
        };
        Ok(Self {
            endpoint: var("ENDPOINT")?,
            model: var("MODEL")?,
            api_key: var("KEY")?,
            timeout: Duration::from_secs(60),
        })
    }

    pub(crate) fn agent(&self) -> ureq::Agent {
        ureq::AgentBuilder::new().timeout(self.timeout).build()
    }

    pub(crate) fn post_json(&self, body: serde_json::Value) -> Result<serde_json::Value> {
        let response = self
            .agent()
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        match response {
            Ok(resp) => resp
                .into_json::<serde_json::Value>()
                .map_err(|e| Error::provider(format!("unreadable response body: {e}"), true)),
            Err(ureq::Error::Status(code, resp)) => {
                let detail = resp.into_string().unwrap_or_default();
                let retryable = code == 408 || code == 429 || code >= 500;
                Err(Error::provider(format!("HTTP {code}: {}", detail.trim()), retryable))
            }
            Err(ureq::Error::Transport(t)) => Err(Error::provider(t.to_string(), true)),
        }
    }
}
