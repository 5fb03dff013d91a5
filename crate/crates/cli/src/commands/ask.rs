use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use advisor_core::queue::{Channel, Handler, JobQueue, JobStatus, QueueOptions, WorkerPool, WorkerPoolConfig};
use advisor_core::rag::{Answer, AnswerKind, RagPipeline};
use advisor_core::Error;
use anyhow::{anyhow, Result};

use crate::config::ServiceConfig;
use crate::runtime;

/// Answers one question through a private queue served by a single worker,
/// the same path a channel message takes.
pub fn ask(pipeline: Arc<RagPipeline>, question: &str, timeout: Duration) -> Result<Answer> {
    let queue = Arc::new(JobQueue::in_memory(QueueOptions::default()));
    let last_error: Arc<Mutex<Option<Error>>> = Arc::default();
    let handler: Handler = {
        let last_error = Arc::clone(&last_error);
        Arc::new(move |job| {
            pipeline.answer_query(&job.query_id, &job.question).inspect_err(|e| {
                *last_error.lock().unwrap() = Some(clone_error(e));
            })
        })
    };
    let pool = WorkerPool::start(
        Arc::clone(&queue),
        WorkerPoolConfig {
            worker_count: 1,
            max_retries: 0,
        },
        handler,
    )?;
    let submitted = queue.submit(Channel::Cli, question, None);
    let status = submitted.and_then(|(id, _)| queue.wait_result(&id, timeout));
    pool.shutdown();
    match status? {
        JobStatus::Completed(result) => Ok(result.answer),
        JobStatus::DeadLetter { reason } => match last_error.lock().unwrap().take() {
            Some(e) => Err(e.into()),
            None => Err(anyhow!("question failed: {reason}")),
        },
        JobStatus::Pending => Err(anyhow!("no answer within {}s", timeout.as_secs())),
    }
}

/// Keeps the error's kind so the exit code can be chosen from it.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::Provider { message, retryable } => Error::Provider {
            message: message.clone(),
            retryable: *retryable,
        },
        other => Error::Validation(other.to_string()),
    }
}

pub fn run(cfg: &ServiceConfig, question: &str, json: bool, out: &mut dyn Write) -> Result<u8> {
    let pipeline = runtime::pipeline(cfg)?;
    if !runtime::has_data(&pipeline) {
        log::warn!("the data directory holds no documents or buildings; run `advisor ingest` first");
    }
    let answer = ask(pipeline, question, Duration::from_secs(cfg.job_timeout_secs))?;
    if json {
        writeln!(out, "{}", serde_json::to_string(&answer)?)?;
        return Ok(0);
    }
    writeln!(out, "{}", answer.text)?;
    match answer.kind {
        AnswerKind::Refusal => writeln!(out, "[kind: refusal]")?,
        AnswerKind::Structured => writeln!(out, "[kind: structured]")?,
        AnswerKind::Generated => writeln!(out, "[kind: generated; sources: {}]", answer.cited_chunk_ids.join(", "))?,
    }
    Ok(0)
}
