//! Durable FIFO queue of user questions, worker pool, and result store.

mod job;
mod pool;
mod store;

pub use job::{
    Channel, DeadLetter, Delivery, EnqueueAck, JobResult, JobStatus, JobSummary, NewJob, QueryJob, WorkerPoolConfig,
};
pub use pool::{Handler, WorkerPool};
pub use store::{JobQueue, QueueOptions, QUEUE_LOG};
