use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::Utc;

use super::job::{Delivery, JobResult, QueryJob, WorkerPoolConfig};
use super::store::JobQueue;
use crate::error::{Error, Result};
use crate::rag::Answer;

/// Turns a job into an answer. Errors and panics count as failed attempts.
pub type Handler = Arc<dyn Fn(&QueryJob) -> Result<Answer> + Send + Sync>;

const POLL: Duration = Duration::from_millis(50);

/// Running worker threads. Dropping the pool without calling
/// [`shutdown`](WorkerPool::shutdown) leaves the threads running.
pub struct WorkerPool {
    queue: Arc<JobQueue>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    pub fn start(queue: Arc<JobQueue>, config: WorkerPoolConfig, handler: Handler) -> Result<Self> {
        if config.worker_count == 0 {
            return Err(Error::Config("worker_count must be at least 1".into()));
        }
        let stop = Arc::new(AtomicBool::new(false));
        let mut workers = Vec::with_capacity(config.worker_count);
        for n in 0..config.worker_count {
            let worker_id = format!("worker-{}", n + 1);
            let (queue, stop, handler) = (Arc::clone(&queue), Arc::clone(&stop), Arc::clone(&handler));
            let handle = thread::Builder::new()
                .name(worker_id.clone())
                .spawn(move || worker_loop(&worker_id, &queue, &stop, &handler, config.max_retries))?;
            workers.push(handle);
        }
        Ok(Self { queue, stop, workers })
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    /// Stops taking new jobs and waits for in-flight ones to finish.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        self.queue.wake_all();
        for w in self.workers {
            if w.join().is_err() {
                log::error!("worker thread panicked outside a job");
            }
        }
    }
}

fn worker_loop(worker_id: &str, queue: &JobQueue, stop: &AtomicBool, handler: &Handler, max_retries: u32) {
    while !stop.load(Ordering::SeqCst) {
        match queue.dequeue(worker_id, POLL) {
            Ok(Some(delivery)) => process(worker_id, queue, handler, max_retries, delivery),
            Ok(None) => {}
            Err(e) => {
                log::error!("{worker_id}: dequeue failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn process(worker_id: &str, queue: &JobQueue, handler: &Handler, max_retries: u32, delivery: Delivery) {
    let Delivery { job, attempt } = delivery;
    let id = job.query_id.clone();
    let allowed = max_retries + 1;
    if attempt > allowed {
        // redelivered after crashes past the retry budget
        finish_dead(queue, &id, &format!("abandoned after {} deliveries", attempt - 1));
        return;
    }
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| handler(&job)));
    let failure = match outcome {
        Ok(Ok(mut answer)) => {
            answer.query_id = id.clone();
            let result = JobResult {
                query_id: id.clone(),
                answer,
                completed_at: Utc::now(),
                worker_id: worker_id.to_string(),
            };
            match queue.store_result(result) {
                Ok(()) => {}
                Err(Error::Conflict(msg)) => log::info!("{worker_id}: discarding duplicate result: {msg}"),
                Err(e) => log::error!("{worker_id}: storing result for {id} failed: {e}"),
            }
            return;
        }
        Ok(Err(e)) => e.to_string(),
        Err(payload) => panic_message(payload.as_ref()),
    };
    log::warn!("{worker_id}: job {id} attempt {attempt}/{allowed} failed: {failure}");
    if attempt >= allowed {
        finish_dead(queue, &id, &format!("failed {attempt} attempts; last error: {failure}"));
    } else if let Err(e) = queue.release(&id, &failure) {
        log::error!("{worker_id}: releasing {id} failed: {e}");
    }
}

fn finish_dead(queue: &JobQueue, id: &str, reason: &str) {
    match queue.dead_letter(id, reason) {
        Ok(()) | Err(Error::Conflict(_)) => {}
        Err(e) => log::error!("dead-lettering {id} failed: {e}"),
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("handler panicked: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("handler panicked: {s}")
    } else {
        "handler panicked".to_string()
    }
}
