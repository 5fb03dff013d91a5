use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::job::{
    Channel, DeadLetter, Delivery, EnqueueAck, JobResult, JobStatus, JobSummary, NewJob, QueryJob,
};
use crate::error::{Error, Result};

pub const QUEUE_LOG: &str = "queue.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueOptions {
    /// Maximum number of jobs waiting or in flight.
    pub capacity: usize,
    /// How long a delivered job stays invisible before it is handed out again.
    pub visibility_timeout: Duration,
}

impl Default for QueueOptions {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            visibility_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEvent {
    Enqueued { job: QueryJob },
    Delivered { query_id: String, worker_id: String, attempt: u32 },
    Released { query_id: String, reason: String },
    Completed { result: JobResult },
    DeadLettered { query_id: String, reason: String },
}

#[derive(Debug, Clone)]
enum State {
    Ready,
    InFlight,
    Completed(JobResult),
    DeadLetter(String),
}

#[derive(Debug)]
struct Record {
    job: QueryJob,
    state: State,
    attempts: u32,
}

impl Record {
    fn status_name(&self) -> &'static str {
        match self.state {
            State::Ready => "pending",
            State::InFlight => "in_flight",
            State::Completed(_) => "completed",
            State::DeadLetter(_) => "dead_letter",
        }
    }
}

#[derive(Debug, Default)]
struct Inner {
    jobs: HashMap<String, Record>,
    ready: BTreeMap<u64, String>,
    in_flight: HashMap<String, Instant>,
    next_seq: u64,
    completions: Vec<String>,
    log: Option<File>,
}

impl Inner {
    fn append(&mut self, event: &LogEvent) -> Result<()> {
        if let Some(log) = self.log.as_mut() {
            let mut line = serde_json::to_vec(event)?;
            line.push(b'\n');
            log.write_all(&line)?;
            log.flush()?;
        }
        Ok(())
    }

    fn active(&self) -> usize {
        self.ready.len() + self.in_flight.len()
    }

    fn make_ready(&mut self, query_id: &str) {
        if let Some(rec) = self.jobs.get_mut(query_id) {
            rec.state = State::Ready;
            self.ready.insert(rec.job.sequence_no, query_id.to_string());
        }
        self.in_flight.remove(query_id);
    }

    fn reap_expired(&mut self, now: Instant) -> Result<()> {
        let expired: Vec<String> = self
            .in_flight
            .iter()
            .filter(|(_, deadline)| **deadline <= now)
            .map(|(id, _)| id.clone())
            .collect();
        for id in expired {
            self.append(&LogEvent::Released {
                query_id: id.clone(),
                reason: "visibility timeout".into(),
            })?;
            log::warn!("job {id} lease expired, redelivering");
            self.make_ready(&id);
        }
        Ok(())
    }

    fn next_deadline(&self) -> Option<Instant> {
        self.in_flight.values().min().copied()
    }

    fn apply(&mut self, event: LogEvent, line: usize) -> Result<()> {
        let missing = |id: &str| Error::Parse {
            line,
            message: format!("event for unknown job {id}"),
        };
        match event {
            LogEvent::Enqueued { job } => {
                self.next_seq = self.next_seq.max(job.sequence_no + 1);
                self.ready.insert(job.sequence_no, job.query_id.clone());
                self.jobs.insert(
                    job.query_id.clone(),
                    Record {
                        job,
                        state: State::Ready,
                        attempts: 0,
                    },
                );
            }
            LogEvent::Delivered { query_id, attempt, .. } => {
                let rec = self.jobs.get_mut(&query_id).ok_or_else(|| missing(&query_id))?;
                rec.attempts = attempt;
            }
            LogEvent::Released { .. } => {}
            LogEvent::Completed { result } => {
                let id = result.query_id.clone();
                let rec = self.jobs.get_mut(&id).ok_or_else(|| missing(&id))?;
                self.ready.remove(&rec.job.sequence_no);
                rec.state = State::Completed(result);
                self.completions.push(id);
            }
            LogEvent::DeadLettered { query_id, reason } => {
                let rec = self.jobs.get_mut(&query_id).ok_or_else(|| missing(&query_id))?;
                self.ready.remove(&rec.job.sequence_no);
                rec.state = State::DeadLetter(reason);
            }
        }
        Ok(())
    }
}

/// FIFO job queue with leases, an append-only event log, and a result store.
///
/// Jobs are handed out in `sequence_no` order. A delivered job that is neither
/// completed, released, nor dead-lettered before its lease expires becomes
/// visible again, so a crashed worker never loses a job. Only the first result
/// stored for a job is kept.
#[derive(Debug)]
pub struct JobQueue {
    path: Option<PathBuf>,
    options: QueueOptions,
    inner: Mutex<Inner>,
    available: Condvar,
    finished: Condvar,
}

impl JobQueue {
    pub fn in_memory(options: QueueOptions) -> Self {
        Self::from_inner(None, options, Inner {
            next_seq: 1,
            ..Inner::default()
        })
    }

    /// Opens (or creates) the queue stored in `dir`, replaying its log. Jobs
    /// that were in flight when the previous process stopped are ready again.
    pub fn open(dir: impl AsRef<Path>, options: QueueOptions) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = dir.join(QUEUE_LOG);
        let (mut inner, unterminated) = replay(&path, true)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::file(&path, e))?;
        inner.log = Some(log);
        if unterminated {
            inner.log.as_mut().expect("just set").write_all(b"\n")?;
        }
        Ok(Self::from_inner(Some(path), options, inner))
    }

    /// Replays the log in `dir` without touching it, for inspecting a queue
    /// another process owns. A torn final line is skipped, not repaired.
    /// Changes made through the snapshot are not persisted.
    pub fn snapshot(dir: impl AsRef<Path>, options: QueueOptions) -> Result<Self> {
        let path = dir.as_ref().join(QUEUE_LOG);
        let (inner, _) = replay(&path, false)?;
        Ok(Self::from_inner(Some(path), options, inner))
    }

    fn from_inner(path: Option<PathBuf>, options: QueueOptions, inner: Inner) -> Self {
        Self {
            path,
            options,
            inner: Mutex::new(inner),
            available: Condvar::new(),
            finished: Condvar::new(),
        }
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn options(&self) -> QueueOptions {
        self.options
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn enqueue(&self, new: NewJob) -> Result<EnqueueAck> {
        if new.query_id.trim().is_empty() {
            return Err(Error::validation("query_id must not be empty"));
        }
        if new.question.trim().is_empty() {
            return Err(Error::validation("question must not be empty"));
        }
        let mut inner = self.lock();
        if inner.jobs.contains_key(&new.query_id) {
            return Err(Error::Conflict(format!("query_id {} already enqueued", new.query_id)));
        }
        let active = inner.active();
        if active >= self.options.capacity {
            return Err(Error::Backpressure(active));
        }
        let seq = inner.next_seq;
        let job = QueryJob {
            query_id: new.query_id,
            channel: new.channel,
            question: new.question,
            conversation_id: new.conversation_id,
            enqueued_at: Utc::now(),
            sequence_no: seq,
        };
        inner.append(&LogEvent::Enqueued { job: job.clone() })?;
        inner.next_seq += 1;
        inner.ready.insert(seq, job.query_id.clone());
        inner.jobs.insert(
            job.query_id.clone(),
            Record {
                job,
                state: State::Ready,
                attempts: 0,
            },
        );
        drop(inner);
        self.available.notify_one();
        Ok(EnqueueAck { sequence_no: seq })
    }

    /// Enqueues a question under a freshly generated query id.
    pub fn submit(
        &self,
        channel: Channel,
        question: impl Into<String>,
        conversation_id: Option<String>,
    ) -> Result<(String, EnqueueAck)> {
        let query_id = {
            let inner = self.lock();
            let base = format!("q-{}", inner.next_seq);
            let mut id = base.clone();
            let mut n = 1;
            while inner.jobs.contains_key(&id) {
                id = format!("{base}-{n}");
                n += 1;
            }
            id
        };
        let ack = self.enqueue(NewJob {
            query_id: query_id.clone(),
            channel,
            question: question.into(),
            conversation_id,
        })?;
        Ok((query_id, ack))
    }

    /// Leases the oldest ready job to `worker_id`, waiting up to `wait` for one.
    pub fn dequeue(&self, worker_id: &str, wait: Duration) -> Result<Option<Delivery>> {
        let give_up = Instant::now() + wait;
        let mut inner = self.lock();
        loop {
            let now = Instant::now();
            inner.reap_expired(now)?;
            if let Some((_, id)) = inner.ready.pop_first() {
                let deadline = now + self.options.visibility_timeout;
                let rec = inner.jobs.get_mut(&id).expect("ready job has a record");
                rec.attempts += 1;
                rec.state = State::InFlight;
                let delivery = Delivery {
                    job: rec.job.clone(),
                    attempt: rec.attempts,
                };
                inner.in_flight.insert(id.clone(), deadline);
                inner.append(&LogEvent::Delivered {
                    query_id: id,
                    worker_id: worker_id.to_string(),
                    attempt: delivery.attempt,
                })?;
                return Ok(Some(delivery));
            }
            if now >= give_up {
                return Ok(None);
            }
            let until = inner.next_deadline().map_or(give_up, |d| d.min(give_up));
            let timeout = until.saturating_duration_since(now).max(Duration::from_millis(1));
            inner = self
                .available
                .wait_timeout(inner, timeout)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Records the answer for a job. A second result for the same job is a conflict.
    pub fn store_result(&self, result: JobResult) -> Result<()> {
        if result.answer.query_id != result.query_id {
            return Err(Error::validation(format!(
                "answer query_id {} does not match job {}",
                result.answer.query_id, result.query_id
            )));
        }
        let mut inner = self.lock();
        let id = result.query_id.clone();
        let rec = inner.jobs.get(&id).ok_or_else(|| Error::NotFound(format!("job {id}")))?;
        match rec.state {
            State::Completed(_) => return Err(Error::Conflict(format!("job {id} already has a result"))),
            State::DeadLetter(_) => return Err(Error::Conflict(format!("job {id} is dead-lettered"))),
            State::Ready | State::InFlight => {}
        }
        let seq = rec.job.sequence_no;
        inner.append(&LogEvent::Completed { result: result.clone() })?;
        inner.ready.remove(&seq);
        inner.in_flight.remove(&id);
        inner.jobs.get_mut(&id).expect("checked above").state = State::Completed(result);
        inner.completions.push(id);
        drop(inner);
        self.finished.notify_all();
        Ok(())
    }

    /// Returns an in-flight job to the ready set for another attempt.
    pub fn release(&self, query_id: &str, reason: &str) -> Result<()> {
        let mut inner = self.lock();
        let rec = inner
            .jobs
            .get(query_id)
            .ok_or_else(|| Error::NotFound(format!("job {query_id}")))?;
        if !matches!(rec.state, State::InFlight) {
            return Ok(());
        }
        inner.append(&LogEvent::Released {
            query_id: query_id.to_string(),
            reason: reason.to_string(),
        })?;
        inner.make_ready(query_id);
        drop(inner);
        self.available.notify_one();
        Ok(())
    }

    pub fn dead_letter(&self, query_id: &str, reason: &str) -> Result<()> {
        let mut inner = self.lock();
        let rec = inner
            .jobs
            .get(query_id)
            .ok_or_else(|| Error::NotFound(format!("job {query_id}")))?;
        if matches!(rec.state, State::Completed(_) | State::DeadLetter(_)) {
            return Err(Error::Conflict(format!("job {query_id} is already finished")));
        }
        let seq = rec.job.sequence_no;
        inner.append(&LogEvent::DeadLettered {
            query_id: query_id.to_string(),
            reason: reason.to_string(),
        })?;
        inner.ready.remove(&seq);
        inner.in_flight.remove(query_id);
        inner.jobs.get_mut(query_id).expect("checked above").state = State::DeadLetter(reason.to_string());
        drop(inner);
        self.finished.notify_all();
        Ok(())
    }

    pub fn get_result(&self, query_id: &str) -> Result<JobStatus> {
        let inner = self.lock();
        status_of(&inner, query_id)
    }

    /// Blocks until the job finishes or `timeout` elapses; returns the status either way.
    pub fn wait_result(&self, query_id: &str, timeout: Duration) -> Result<JobStatus> {
        let give_up = Instant::now() + timeout;
        let mut inner = self.lock();
        loop {
            let status = status_of(&inner, query_id)?;
            let now = Instant::now();
            if status.is_terminal() || now >= give_up {
                return Ok(status);
            }
            inner = self
                .finished
                .wait_timeout(inner, give_up - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    pub fn job(&self, query_id: &str) -> Option<QueryJob> {
        self.lock().jobs.get(query_id).map(|r| r.job.clone())
    }

    /// All jobs, oldest first.
    pub fn list(&self) -> Vec<JobSummary> {
        let inner = self.lock();
        let mut rows: Vec<JobSummary> = inner
            .jobs
            .values()
            .map(|r| JobSummary {
                sequence_no: r.job.sequence_no,
                query_id: r.job.query_id.clone(),
                channel: r.job.channel,
                status: r.status_name(),
                attempts: r.attempts,
                question: r.job.question.clone(),
            })
            .collect();
        rows.sort_by_key(|r| r.sequence_no);
        rows
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        let inner = self.lock();
        let mut rows: Vec<DeadLetter> = inner
            .jobs
            .values()
            .filter_map(|r| match &r.state {
                State::DeadLetter(reason) => Some(DeadLetter {
                    job: r.job.clone(),
                    reason: reason.clone(),
                    attempts: r.attempts,
                }),
                _ => None,
            })
            .collect();
        rows.sort_by_key(|d| d.job.sequence_no);
        rows
    }

    /// Query ids in the order their results were stored.
    pub fn completion_order(&self) -> Vec<String> {
        self.lock().completions.clone()
    }

    /// Jobs waiting or in flight.
    pub fn pending_count(&self) -> usize {
        self.lock().active()
    }

    /// Wakes every blocked `dequeue` so callers can re-check their stop conditions.
    pub fn wake_all(&self) {
        self.available.notify_all();
    }
}

/// Rebuilds queue state from the log at `path`. With `repair`, a torn final
/// line is truncated away. Returns whether the file lacked a final newline.
fn replay(path: &Path, repair: bool) -> Result<(Inner, bool)> {
    let mut inner = Inner {
        next_seq: 1,
        ..Inner::default()
    };
    let mut unterminated = false;
    if !path.exists() {
        return Ok((inner, unterminated));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n').enumerate().peekable();
    while let Some((i, raw)) = lines.next() {
        let is_last = lines.peek().is_none();
        if !raw.trim().is_empty() {
            match serde_json::from_str::<LogEvent>(raw.trim_end()) {
                Ok(event) => inner.apply(event, i + 1)?,
                Err(e) if is_last => {
                    log::warn!("{}: dropping torn line {}: {e}", path.display(), i + 1);
                    if repair {
                        let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::file(path, e))?;
                        f.set_len(offset).map_err(|e| Error::file(path, e))?;
                    }
                    break;
                }
                Err(e) => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        offset += raw.len() as u64;
        unterminated = is_last && !raw.ends_with('\n');
    }
    Ok((inner, unterminated))
}

fn status_of(inner: &Inner, query_id: &str) -> Result<JobStatus> {
    let rec = inner
        .jobs
        .get(query_id)
        .ok_or_else(|| Error::NotFound(format!("job {query_id}")))?;
    Ok(match &rec.state {
        State::Ready | State::InFlight => JobStatus::Pending,
        State::Completed(r) => JobStatus::Completed(r.clone()),
        State::DeadLetter(reason) => JobStatus::DeadLetter { reason: reason.clone() },
    })
}
