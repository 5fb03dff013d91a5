use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use advisor_core::channels::{ChatGateway, ChatServer, EmailChannel, Mailbox, RatingStore};
use advisor_core::clock::{Clock, SystemClock};
use advisor_core::conversation::{ConversationStore, Pseudonymizer};
use advisor_core::queue::{Handler, JobQueue, QueueOptions, WorkerPool, WorkerPoolConfig};
use anyhow::{bail, Context, Result};

use crate::config::ServiceConfig;
use crate::runtime;

#[derive(Debug, Clone, Default)]
pub struct ServeArgs {
    pub allow_empty: bool,
}

/// A running service: chat gateway, email poller, housekeeping and workers.
pub struct Service {
    chat_addr: SocketAddr,
    inbox: PathBuf,
    stop: Arc<AtomicBool>,
    chat: JoinHandle<()>,
    background: Vec<JoinHandle<()>>,
    pool: WorkerPool,
    queue: Arc<JobQueue>,
    conversations: Arc<ConversationStore>,
}

/// Sleeps in short slices so a stop request is noticed quickly.
fn pause(stop: &AtomicBool, total: Duration) {
    let until = Instant::now() + total;
    while !stop.load(Ordering::SeqCst) {
        let now = Instant::now();
        if now >= until {
            break;
        }
        thread::sleep((until - now).min(Duration::from_millis(100)));
    }
}

impl Service {
    pub fn start(cfg: &ServiceConfig, args: &ServeArgs, pseudonymizer: Pseudonymizer) -> Result<Self> {
        let layout = cfg.layout();
        let pipeline = runtime::pipeline(cfg)?;
        if !args.allow_empty && !runtime::has_data(&pipeline) {
            bail!(
                "{} holds no ingested data; run `advisor ingest` first or pass --allow-empty",
                layout.root().display()
            );
        }
        let queue = Arc::new(JobQueue::open(
            layout.queue(),
            QueueOptions {
                capacity: cfg.queue_capacity,
                visibility_timeout: Duration::from_secs(cfg.visibility_timeout_secs),
            },
        )?);
        let conversations = Arc::new(ConversationStore::open(
            layout.conversations(),
            Arc::new(SystemClock),
            pseudonymizer,
        )?);
        let ratings = Arc::new(RatingStore::open(layout.ratings())?);
        let job_timeout = Duration::from_secs(cfg.job_timeout_secs);

        let gateway = ChatGateway::new(
            Arc::clone(&queue),
            Arc::clone(&conversations),
            Arc::clone(&ratings),
            job_timeout,
        )
        .with_token(cfg.chat_token.clone());
        let server = ChatServer::bind(cfg.chat_listen.as_str(), Arc::new(gateway))
            .with_context(|| format!("cannot listen on {}", cfg.chat_listen))?;
        let chat_addr = server.local_addr()?;

        let handler: Handler = Arc::new(move |job| pipeline.answer_query(&job.query_id, &job.question));
        let pool = WorkerPool::start(
            Arc::clone(&queue),
            WorkerPoolConfig {
                worker_count: cfg.worker_count,
                max_retries: cfg.max_retries,
            },
            handler,
        )?;

        let stop = Arc::new(AtomicBool::new(false));
        let chat = server.spawn(Arc::clone(&stop));
        let poll_interval = Duration::from_secs(cfg.poll_interval_secs);

        let inbox = layout.inbox();
        let email = EmailChannel::new(
            Mailbox::new(&inbox, layout.outbox())?,
            Arc::clone(&queue),
            Arc::clone(&conversations),
            ratings,
            job_timeout,
        );
        let poller = {
            let stop = Arc::clone(&stop);
            thread::Builder::new().name("email-poller".into()).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    match email.process_inbox() {
                        Ok(r) => {
                            if !(r.answered.is_empty() && r.ratings.is_empty() && r.quarantined.is_empty()) {
                                log::info!(
                                    "mail: {} answered, {} rating(s), {} quarantined, {} waiting",
                                    r.answered.len(),
                                    r.ratings.len(),
                                    r.quarantined.len(),
                                    r.waiting.len()
                                );
                            }
                        }
                        Err(e) => log::error!("mail poll failed: {e}"),
                    }
                    pause(&stop, poll_interval);
                }
            })?
        };

        let housekeeping = {
            let (stop, conversations) = (Arc::clone(&stop), Arc::clone(&conversations));
            let policy = cfg.retention_policy();
            thread::Builder::new().name("housekeeping".into()).spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    let now = SystemClock.now();
                    if let Err(e) = conversations.flush_inactive(now, &policy) {
                        log::error!("conversation flush failed: {e}");
                    }
                    match conversations.purge_expired(now, &policy) {
                        Ok(0) => {}
                        Ok(n) => log::info!("purged {n} expired conversation(s)"),
                        Err(e) => log::error!("conversation purge failed: {e}"),
                    }
                    pause(&stop, poll_interval);
                }
            })?
        };

        Ok(Self {
            chat_addr,
            inbox,
            stop,
            chat,
            background: vec![poller, housekeeping],
            pool,
            queue,
            conversations,
        })
    }

    pub fn chat_addr(&self) -> SocketAddr {
        self.chat_addr
    }

    pub fn worker_count(&self) -> usize {
        self.pool.worker_count()
    }

    pub fn queue(&self) -> &JobQueue {
        &self.queue
    }

    /// Stops accepting work, lets requests and jobs already underway finish,
    /// then writes every conversation to disk.
    pub fn shutdown(self) -> Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.chat.join();
        for h in self.background {
            let _ = h.join();
        }
        self.pool.shutdown();
        self.conversations.flush_all()?;
        Ok(())
    }
}

pub fn run(cfg: &ServiceConfig, args: &ServeArgs, out: &mut dyn Write) -> Result<u8> {
    let pseudonymizer = Pseudonymizer::from_env()?;
    let signalled = Arc::new(AtomicBool::new(false));
    {
        let signalled = Arc::clone(&signalled);
        ctrlc::set_handler(move || signalled.store(true, Ordering::SeqCst)).context("installing signal handler")?;
    }
    let service = Service::start(cfg, args, pseudonymizer)?;
    writeln!(out, "chat listening on {}", service.chat_addr())?;
    writeln!(out, "workers: {}", service.worker_count())?;
    writeln!(out, "mail inbox: {}", service.inbox.display())?;
    writeln!(out, "pending jobs: {}", service.queue().pending_count())?;
    out.flush()?;
    while !signalled.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(100));
    }
    writeln!(out, "shutting down")?;
    out.flush()?;
    service.shutdown()?;
    writeln!(out, "stopped")?;
    Ok(0)
}
