use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::queue::{Channel, JobQueue, JobStatus};

pub const RATINGS_FILE: &str = "ratings.jsonl";

/// A 1-5 quality score for one answered question. `rater` is a pseudonymous token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertRating {
    pub query_id: String,
    pub score: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub rater: String,
    pub channel: Channel,
    pub rated_at: DateTime<Utc>,
}

/// Append-only rating log. One rating per (query, rater).
#[derive(Debug)]
pub struct RatingStore {
    path: Option<PathBuf>,
    ratings: Mutex<Vec<ExpertRating>>,
}

impl RatingStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            ratings: Mutex::default(),
        }
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = dir.join(RATINGS_FILE);
        let mut ratings = Vec::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                ratings.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?);
            }
        }
        Ok(Self {
            path: Some(path),
            ratings: Mutex::new(ratings),
        })
    }

    /// Validates and persists a rating. The query must have a completed result.
    pub fn record(&self, rating: ExpertRating, queue: &JobQueue) -> Result<ExpertRating> {
        if !(1..=5).contains(&rating.score) {
            return Err(Error::validation(format!("score {} outside 1-5", rating.score)));
        }
        match queue.get_result(&rating.query_id)? {
            JobStatus::Completed(_) => {}
            _ => {
                return Err(Error::validation(format!(
                    "query {} has no completed answer to rate",
                    rating.query_id
                )))
            }
        }
        let mut ratings = self.ratings.lock().unwrap_or_else(|p| p.into_inner());
        if ratings
            .iter()
            .any(|r| r.query_id == rating.query_id && r.rater == rating.rater)
        {
            return Err(Error::Conflict(format!("query {} already rated by this rater", rating.query_id)));
        }
        if let Some(path) = &self.path {
            let mut line = serde_json::to_vec(&rating)?;
            line.push(b'\n');
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| f.write_all(&line))
                .map_err(|e| Error::file(path, e))?;
        }
        ratings.push(rating.clone());
        Ok(rating)
    }

    pub fn list(&self) -> Vec<ExpertRating> {
        self.ratings.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queue::{JobResult, NewJob, QueueOptions};
    use crate::rag::Answer;
    use std::time::Duration;

    fn answered_queue() -> JobQueue {
        let q = JobQueue::in_memory(QueueOptions::default());
        q.enqueue(NewJob {
            query_id: "q-7".into(),
            channel: Channel::Email,
            question: "?".into(),
            conversation_id: None,
        })
        .unwrap();
        q.dequeue("w", Duration::ZERO).unwrap();
        q.store_result(JobResult {
            query_id: "q-7".into(),
            answer: Answer::structured("q-7", "x".into()),
            completed_at: Utc::now(),
            worker_id: "w".into(),
        })
        .unwrap();
        q
    }

    fn rating(score: u8, qid: &str) -> ExpertRating {
        ExpertRating {
            query_id: qid.into(),
            score,
            comment: None,
            rater: "p-1".into(),
            channel: Channel::Email,
            rated_at: Utc::now(),
        }
    }

    #[test]
    fn rules() {
        let q = answered_queue();
        let dir = tempfile::tempdir().unwrap();
        let store = RatingStore::open(dir.path()).unwrap();
        assert!(matches!(store.record(rating(0, "q-7"), &q), Err(Error::Validation(_))));
        assert!(matches!(store.record(rating(6, "q-7"), &q), Err(Error::Validation(_))));
        assert!(matches!(store.record(rating(3, "q-404"), &q), Err(Error::NotFound(_))));
        store.record(rating(4, "q-7"), &q).unwrap();
        assert!(matches!(store.record(rating(5, "q-7"), &q), Err(Error::Conflict(_))));
        let reopened = RatingStore::open(dir.path()).unwrap();
        assert_eq!(reopened.list().len(), 1);
        assert_eq!(reopened.list()[0].score, 4);
    }
}
