//! Service configuration: a TOML file, overridden by `ADVISOR_*` environment
//! variables, overridden by command-line flags.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use advisor_core::conversation::RetentionPolicy;
use advisor_core::knowledge::{DEFAULT_MAX_CHARS, DEFAULT_OVERLAP_CHARS};
use advisor_core::rag::GenerationConfig;
use anyhow::{bail, Context, Result};
use serde::Deserialize;

pub const CONFIG_ENV: &str = "ADVISOR_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    External,
}

impl FromStr for ProviderKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mock" => Ok(Self::Mock),
            "external" => Ok(Self::External),
            other => bail!("unknown provider {other:?} (expected mock or external)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionSettings {
    pub inactivity_flush_secs: u64,
    pub max_age_days: u64,
}

impl Default for RetentionSettings {
    fn default() -> Self {
        let policy = RetentionPolicy::default();
        Self {
            inactivity_flush_secs: policy.inactivity_flush.as_secs(),
            max_age_days: policy.max_age.as_secs() / 86_400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub chat_listen: String,
    /// Defaults to `<data_dir>/mail/inbox`.
    pub inbox_dir: Option<PathBuf>,
    /// Defaults to `<data_dir>/mail/outbox`.
    pub outbox_dir: Option<PathBuf>,
    pub poll_interval_secs: u64,
    pub worker_count: usize,
    pub max_retries: u32,
    pub job_timeout_secs: u64,
    pub visibility_timeout_secs: u64,
    pub queue_capacity: usize,
    pub embedder: ProviderKind,
    pub generator: ProviderKind,
    pub embedding_dims: usize,
    pub chunk_max_chars: usize,
    pub chunk_overlap_chars: usize,
    pub provider_retries: u32,
    pub chat_token: Option<String>,
    pub generation: GenerationConfig,
    pub retention: RetentionSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("advisor-data"),
            chat_listen: "127.0.0.1:7878".into(),
            inbox_dir: None,
            outbox_dir: None,
            poll_interval_secs: 5,
            worker_count: 1,
            max_retries: 1,
            job_timeout_secs: 60,
            visibility_timeout_secs: 120,
            queue_capacity: 10_000,
            embedder: ProviderKind::Mock,
            generator: ProviderKind::Mock,
            embedding_dims: advisor_core::index::DEFAULT_DIMS,
            chunk_max_chars: DEFAULT_MAX_CHARS,
            chunk_overlap_chars: DEFAULT_OVERLAP_CHARS,
            provider_retries: 2,
            chat_token: None,
            generation: GenerationConfig::default(),
            retention: RetentionSettings::default(),
        }
    }
}

/// Values given on the command line. `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub chat_listen: Option<String>,
    pub worker_count: Option<usize>,
}

impl ServiceConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("in config {}", path.display()))?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        if let Ok(table) = text.parse::<toml::Table>() {
            if table.contains_key("pseudonym_key") {
                bail!(
                    "pseudonym_key must not be stored in the config file; set {} instead",
                    advisor_core::conversation::PSEUDONYM_KEY_ENV
                );
            }
        }
        Ok(toml::from_str(text)?)
    }

    /// Builds the effective configuration: file (if any), then environment,
    /// then flags.
    pub fn load(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        cfg.apply_env(|name| env::var(name).ok())?;
        cfg.apply_overrides(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        for p in [Some(&mut self.data_dir), self.inbox_dir.as_mut(), self.outbox_dir.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        fn parsed<T: FromStr>(name: &str, raw: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            raw.trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("environment variable {name}={raw:?}: {e}"))
        }
        let get = |name: &str| var(name).filter(|v| !v.trim().is_empty());

        if let Some(v) = get("ADVISOR_DATA_DIR") {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = get("ADVISOR_CHAT_LISTEN") {
            self.chat_listen = v;
        }
        if let Some(v) = get("ADVISOR_INBOX_DIR") {
            self.inbox_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("ADVISOR_OUTBOX_DIR") {
            self.outbox_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("ADVISOR_WORKERS") {
            self.worker_count = parsed("ADVISOR_WORKERS", &v)?;
        }
        if let Some(v) = get("ADVISOR_EMBEDDER") {
            self.embedder = parsed("ADVISOR_EMBEDDER", &v)?;
        }
        if let Some(v) = get("ADVISOR_GENERATOR") {
            self.generator = parsed("ADVISOR_GENERATOR", &v)?;
        }
        if let Some(v) = get("ADVISOR_EMBEDDING_DIMS") {
            self.embedding_dims = parsed("ADVISOR_EMBEDDING_DIMS", &v)?;
        }
        if let Some(v) = get("ADVISOR_CHAT_TOKEN") {
            self.chat_token = Some(v);
        }
        Ok(())
    }

    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let Some(v) = &o.data_dir {
            self.data_dir = v.clone();
        }
        if let Some(v) = &o.chat_listen {
            self.chat_listen = v.clone();
        }
        if let Some(v) = o.worker_count {
            self.worker_count = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.worker_count == 0 {
            bail!("worker_count must be at least 1");
        }
        if self.poll_interval_secs == 0 {
            bail!("poll_interval_secs must be at least 1");
        }
        if self.job_timeout_secs == 0 || self.visibility_timeout_secs == 0 {
            bail!("job_timeout_secs and visibility_timeout_secs must be positive");
        }
        if self.queue_capacity == 0 {
            bail!("queue_capacity must be at least 1");
        }
        if self.embedding_dims == 0 {
            bail!("embedding_dims must be at least 1");
        }
        if self.chunk_overlap_chars >= self.chunk_max_chars {
            bail!(
                "chunk_overlap_chars ({}) must be smaller than chunk_max_chars ({})",
                self.chunk_overlap_chars,
                self.chunk_max_chars
            );
        }
        if !self.chat_listen.contains(':') {
            bail!("chat_listen {:?} is not a host:port address", self.chat_listen);
        }
        self.generation.validate()?;
        self.retention_policy().validate()?;
        Ok(())
    }

    pub fn retention_policy(&self) -> RetentionPolicy {
        RetentionPolicy {
            inactivity_flush: Duration::from_secs(self.retention.inactivity_flush_secs),
            max_age: Duration::from_secs(self.retention.max_age_days * 86_400),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.data_dir.clone(),
            inbox: self.inbox_dir.clone(),
            outbox: self.outbox_dir.clone(),
        }
    }
}

/// Where each store lives under the data directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
    inbox: Option<PathBuf>,
    outbox: Option<PathBuf>,
}

impl Layout {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn knowledge(&self) -> PathBuf {
        self.root.join("knowledge")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.jsonl")
    }

    pub fn queue(&self) -> PathBuf {
        self.root.join("queue")
    }

    pub fn conversations(&self) -> PathBuf {
        self.root.join("conversations")
    }

    /// Ratings sit next to the queue they refer to.
    pub fn ratings(&self) -> PathBuf {
        self.root.clone()
    }

    pub fn inbox(&self) -> PathBuf {
        self.inbox.clone().unwrap_or_else(|| self.root.join("mail").join("inbox"))
    }

    pub fn outbox(&self) -> PathBuf {
        self.outbox.clone().unwrap_or_else(|| self.root.join("mail").join("outbox"))
    }
}
