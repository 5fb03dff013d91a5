use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::rag::Answer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Chat,
    Email,
    Cli,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Chat => "chat",
            Channel::Email => "email",
            Channel::Cli => "cli",
        })
    }
}

/// What a producer hands to [`JobQueue::enqueue`](super::JobQueue::enqueue).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewJob {
    pub query_id: String,
    pub channel: Channel,
    pub question: String,
    pub conversation_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryJob {
    pub query_id: String,
    pub channel: Channel,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_id: Option<String>,
    pub enqueued_at: DateTime<Utc>,
    pub sequence_no: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnqueueAck {
    pub sequence_no: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub query_id: String,
    pub answer: Answer,
    pub completed_at: DateTime<Utc>,
    pub worker_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum JobStatus {
    Pending,
    Completed(JobResult),
    DeadLetter { reason: String },
}

impl JobStatus {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, JobStatus::Pending)
    }
}

/// A job handed to a worker. `attempt` counts deliveries, starting at 1.
#[derive(Debug, Clone)]
pub struct Delivery {
    pub job: QueryJob,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPoolConfig {
    pub worker_count: usize,
    /// Deliveries allowed after the first before a job is dead-lettered.
    pub max_retries: u32,
}

impl Default for WorkerPoolConfig {
    fn default() -> Self {
        Self {
            worker_count: 1,
            max_retries: 1,
        }
    }
}

/// One row of the admin listing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobSummary {
    pub sequence_no: u64,
    pub query_id: String,
    pub channel: Channel,
    pub status: &'static str,
    pub attempts: u32,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeadLetter {
    pub job: QueryJob,
    pub reason: String,
    pub attempts: u32,
}
