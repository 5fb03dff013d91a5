//! Read-only views of the job queue and the rating log.

use std::io::Write;

use advisor_core::channels::RatingStore;
use advisor_core::queue::{JobQueue, QueueOptions};
use anyhow::Result;

use crate::config::ServiceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueView {
    Jobs,
    DeadLetters,
    Ratings,
}

fn one_line(text: &str) -> String {
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() > 60 {
        format!("{}...", flat.chars().take(57).collect::<String>())
    } else {
        flat
    }
}

pub fn run(cfg: &ServiceConfig, view: QueueView, json: bool, out: &mut dyn Write) -> Result<u8> {
    let layout = cfg.layout();
    match view {
        QueueView::Jobs => {
            let jobs = JobQueue::snapshot(layout.queue(), QueueOptions::default())?.list();
            if json {
                writeln!(out, "{}", serde_json::to_string(&jobs)?)?;
                return Ok(0);
            }
            writeln!(out, "{:>5}  {:<12} {:<7} {:<11} {:>8}  question", "seq", "query_id", "channel", "status", "attempts")?;
            for j in &jobs {
                writeln!(
                    out,
                    "{:>5}  {:<12} {:<7} {:<11} {:>8}  {}",
                    j.sequence_no,
                    j.query_id,
                    j.channel.to_string(),
                    j.status,
                    j.attempts,
                    one_line(&j.question)
                )?;
            }
            writeln!(out, "{} job(s)", jobs.len())?;
        }
        QueueView::DeadLetters => {
            let dead = JobQueue::snapshot(layout.queue(), QueueOptions::default())?.dead_letters();
            if json {
                writeln!(out, "{}", serde_json::to_string(&dead)?)?;
                return Ok(0);
            }
            for d in &dead {
                writeln!(
                    out,
                    "{}  {}  attempts={}  reason: {}",
                    d.job.query_id, d.job.channel, d.attempts, d.reason
                )?;
                writeln!(out, "    {}", one_line(&d.job.question))?;
            }
            writeln!(out, "{} dead-lettered job(s)", dead.len())?;
        }
        QueueView::Ratings => {
            let ratings = if layout.ratings().exists() {
                RatingStore::open(layout.ratings())?.list()
            } else {
                Vec::new()
            };
            if json {
                writeln!(out, "{}", serde_json::to_string(&ratings)?)?;
                return Ok(0);
            }
            for r in &ratings {
                writeln!(
                    out,
                    "{}  score={}  channel={}  rater={}  at={}{}",
                    r.query_id,
                    r.score,
                    r.channel,
                    r.rater,
                    r.rated_at.to_rfc3339(),
                    r.comment.as_deref().map(|c| format!("  comment: {}", one_line(c))).unwrap_or_default()
                )?;
            }
            writeln!(out, "{} rating(s)", ratings.len())?;
        }
    }
    Ok(0)
}
