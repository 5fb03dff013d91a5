use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use advisor_core::eval::{self, EvalConfig, EvalOutcome, ScoringMode, DEFAULT_TOLERANCE};
use advisor_core::rag::Answer;
use anyhow::Result;

use crate::config::ServiceConfig;
use crate::runtime;

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub pairs: PathBuf,
    pub mode: ScoringMode,
    pub tolerance: f64,
    /// Defaults to `<data_dir>/eval`.
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn new(pairs: impl Into<PathBuf>) -> Self {
        Self {
            pairs: pairs.into(),
            mode: ScoringMode::Strict,
            tolerance: DEFAULT_TOLERANCE,
            out: None,
        }
    }
}

/// Scores a pairs file. Rows without a generated answer are answered by the
/// pipeline when the data directory has been ingested.
pub fn evaluate(cfg: &ServiceConfig, pairs_path: &Path, config: &EvalConfig) -> Result<EvalOutcome> {
    let (pairs, invalid) = eval::load_pairs(pairs_path)?;
    let embedder = runtime::embedder(cfg)?;
    let pipeline = if cfg.layout().knowledge().exists() {
        Some(runtime::pipeline(cfg)?)
    } else {
        None
    };
    let counter = AtomicUsize::new(1);
    let answer = |question: &str| -> advisor_core::Result<Answer> {
        let id = format!("eval-{}", counter.fetch_add(1, Ordering::Relaxed));
        pipeline.as_ref().expect("answerer only offered with a pipeline").answer_query(&id, question)
    };
    let answerer: Option<eval::Answerer<'_>> = pipeline.as_ref().map(|_| &answer as eval::Answerer<'_>);
    let mut outcome = eval::run_eval(&pairs, embedder.as_ref(), answerer, config);
    let mut all_invalid = invalid;
    all_invalid.append(&mut outcome.invalid);
    all_invalid.sort_by_key(|r| r.row);
    outcome.invalid = all_invalid;
    Ok(outcome)
}

pub fn run(cfg: &ServiceConfig, args: &EvalArgs, json: bool, out: &mut dyn Write) -> Result<u8> {
    let config = EvalConfig {
        mode: args.mode,
        tolerance: args.tolerance,
    };
    let outcome = evaluate(cfg, &args.pairs, &config)?;
    let out_dir = args.out.clone().unwrap_or_else(|| cfg.layout().root().join("eval"));
    let written = eval::write_reports(&outcome, &out_dir)?;
    if json {
        writeln!(out, "{}", serde_json::to_string(&outcome)?)?;
    } else {
        write!(out, "{}", eval::summary(&outcome))?;
        writeln!(out)?;
        writeln!(out, "Reports written to {}", out_dir.display())?;
        for path in &written {
            log::debug!("wrote {}", path.display());
        }
    }
    Ok(if outcome.is_clean() { 0 } else { 1 })
}
