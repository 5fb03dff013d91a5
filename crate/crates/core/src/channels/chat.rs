use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::rating::{ExpertRating, RatingStore};
use crate::conversation::{validate_conversation_id, ConversationStore, Role};
use crate::error::{Error, Result};
use crate::queue::{Channel, JobQueue, JobStatus};
use crate::rag::AnswerKind;

pub const MAX_LINE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeType {
    UserMessage,
    AgentMessage,
    Status,
    Error,
    HistoryRequest,
    Rating,
}

/// One line of the chat protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEnvelope {
    #[serde(rename = "type")]
    pub kind: EnvelopeType,
    #[serde(default)]
    pub conversation_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default = "Utc::now")]
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_kind: Option<AnswerKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cited_chunk_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<u8>,
    /// Set on messages replayed in answer to a history request.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub replay: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
}

impl ChatEnvelope {
    pub fn new(kind: EnvelopeType, conversation_id: impl Into<String>) -> Self {
        Self {
            kind,
            conversation_id: conversation_id.into(),
            query_id: None,
            text: None,
            timestamp: Utc::now(),
            answer_kind: None,
            cited_chunk_ids: Vec::new(),
            score: None,
            replay: false,
            token: None,
        }
    }

    pub fn user_message(conversation_id: impl Into<String>, text: impl Into<String>) -> Self {
        let mut e = Self::new(EnvelopeType::UserMessage, conversation_id);
        e.text = Some(text.into());
        e
    }

    fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    fn with_query(mut self, query_id: Option<&str>) -> Self {
        self.query_id = query_id.map(str::to_string);
        self
    }

    fn error(conversation_id: &str, query_id: Option<&str>, text: impl Into<String>) -> Self {
        Self::new(EnvelopeType::Error, conversation_id).with_query(query_id).with_text(text)
    }

    fn status(conversation_id: &str, query_id: Option<&str>, text: impl Into<String>) -> Self {
        Self::new(EnvelopeType::Status, conversation_id).with_query(query_id).with_text(text)
    }
}

/// Protocol logic independent of the transport.
pub struct ChatGateway {
    queue: Arc<JobQueue>,
    conversations: Arc<ConversationStore>,
    ratings: Arc<RatingStore>,
    job_timeout: Duration,
    token: Option<String>,
}

impl ChatGateway {
    pub fn new(
        queue: Arc<JobQueue>,
        conversations: Arc<ConversationStore>,
        ratings: Arc<RatingStore>,
        job_timeout: Duration,
    ) -> Self {
        Self {
            queue,
            conversations,
            ratings,
            job_timeout,
            token: None,
        }
    }

    /// Require every inbound envelope to carry this shared secret.
    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    /// Parses one protocol line and handles it.
    pub fn handle_line(&self, line: &str, emit: &mut dyn FnMut(ChatEnvelope)) {
        match serde_json::from_str::<ChatEnvelope>(line) {
            Ok(env) => self.handle(env, emit),
            Err(e) => emit(ChatEnvelope::error("", None, format!("malformed envelope: {e}"))),
        }
    }

    pub fn handle(&self, env: ChatEnvelope, emit: &mut dyn FnMut(ChatEnvelope)) {
        if let Some(expected) = &self.token {
            if env.token.as_deref() != Some(expected.as_str()) {
                emit(ChatEnvelope::error(&env.conversation_id, None, "unauthorized"));
                return;
            }
        }
        if let Err(e) = validate_conversation_id(&env.conversation_id) {
            emit(ChatEnvelope::error(&env.conversation_id, None, e.to_string()));
            return;
        }
        match env.kind {
            EnvelopeType::UserMessage => self.handle_user_message(&env, emit),
            EnvelopeType::HistoryRequest => self.handle_history(&env, emit),
            EnvelopeType::Rating => self.handle_rating(&env, emit),
            other => emit(ChatEnvelope::error(
                &env.conversation_id,
                None,
                format!("clients may not send {other:?} envelopes"),
            )),
        }
    }

    fn handle_user_message(&self, env: &ChatEnvelope, emit: &mut dyn FnMut(ChatEnvelope)) {
        let cid = env.conversation_id.as_str();
        let Some(text) = env.text.as_deref().map(str::trim).filter(|t| !t.is_empty()) else {
            emit(ChatEnvelope::error(cid, None, "user_message requires non-empty text"));
            return;
        };
        let text = self.conversations.pseudonymizer().scrub(text);
        let text = text.as_str();
        let query_id = match self.queue.submit(Channel::Chat, text, Some(cid.to_string())) {
            Ok((qid, _)) => qid,
            Err(Error::Backpressure(_)) => {
                emit(ChatEnvelope::status(cid, None, "busy, retry"));
                return;
            }
            Err(e) => {
                emit(ChatEnvelope::error(cid, None, format!("could not accept message: {e}")));
                return;
            }
        };
        let qid = Some(query_id.as_str());
        if let Err(e) = self.conversations.append_message(cid, Role::User, text, qid) {
            log::error!("storing user message for {query_id} failed: {e}");
        }
        emit(ChatEnvelope::status(cid, qid, "queued"));
        match self.queue.wait_result(&query_id, self.job_timeout) {
            Ok(JobStatus::Completed(result)) => {
                let answer = result.answer;
                if let Err(e) = self.conversations.append_message(cid, Role::Agent, &answer.text, qid) {
                    log::error!("storing agent message for {query_id} failed: {e}");
                }
                let mut out = ChatEnvelope::new(EnvelopeType::AgentMessage, cid)
                    .with_query(qid)
                    .with_text(answer.text);
                out.answer_kind = Some(answer.kind);
                out.cited_chunk_ids = answer.cited_chunk_ids;
                emit(out);
            }
            Ok(JobStatus::DeadLetter { .. }) => {
                emit(ChatEnvelope::error(cid, qid, "the question could not be answered"));
            }
            Ok(JobStatus::Pending) => emit(ChatEnvelope::error(cid, qid, "timed out waiting for an answer")),
            Err(e) => emit(ChatEnvelope::error(cid, qid, e.to_string())),
        }
    }

    fn handle_history(&self, env: &ChatEnvelope, emit: &mut dyn FnMut(ChatEnvelope)) {
        let cid = env.conversation_id.as_str();
        let messages = self.conversations.messages(cid).unwrap_or_default();
        let count = messages.len();
        for m in messages {
            let kind = match m.role {
                Role::User => EnvelopeType::UserMessage,
                Role::Agent => EnvelopeType::AgentMessage,
            };
            let mut out = ChatEnvelope::new(kind, cid).with_query(m.query_id.as_deref()).with_text(m.text);
            out.timestamp = m.timestamp;
            out.replay = true;
            emit(out);
        }
        emit(ChatEnvelope::status(cid, None, format!("history complete ({count} messages)")));
    }

    fn handle_rating(&self, env: &ChatEnvelope, emit: &mut dyn FnMut(ChatEnvelope)) {
        let cid = env.conversation_id.as_str();
        let qid = env.query_id.as_deref();
        let result = (|| {
            let query_id = qid.ok_or_else(|| Error::validation("rating requires query_id"))?;
            let score = env.score.ok_or_else(|| Error::validation("rating requires score"))?;
            let job = self
                .queue
                .job(query_id)
                .filter(|j| j.conversation_id.as_deref() == Some(cid))
                .ok_or_else(|| Error::NotFound(format!("query {query_id} in this conversation")))?;
            let rater = self
                .conversations
                .get(cid)
                .map(|c| c.participant_ref)
                .map_or_else(|| self.conversations.pseudonymizer().pseudonymize(cid), Ok)?;
            self.ratings.record(
                ExpertRating {
                    query_id: job.query_id,
                    score,
                    comment: env.text.clone().filter(|t| !t.trim().is_empty()),
                    rater,
                    channel: Channel::Chat,
                    rated_at: Utc::now(),
                },
                &self.queue,
            )
        })();
        match result {
            Ok(r) => emit(ChatEnvelope::status(cid, qid, format!("rating {} recorded", r.score))),
            Err(e) => emit(ChatEnvelope::error(cid, qid, e.to_string())),
        }
    }
}

/// Newline-delimited JSON over TCP, one thread per connection.
pub struct ChatServer {
    listener: TcpListener,
    gateway: Arc<ChatGateway>,
}

impl ChatServer {
    pub fn bind(addr: impl ToSocketAddrs, gateway: Arc<ChatGateway>) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self { listener, gateway })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts connections until `stop` is set, then waits for open
    /// connections to finish the request they are handling.
    pub fn spawn(self, stop: Arc<AtomicBool>) -> JoinHandle<()> {
        thread::spawn(move || {
            let mut connections: Vec<JoinHandle<()>> = Vec::new();
            while !stop.load(Ordering::SeqCst) {
                match self.listener.accept() {
                    Ok((stream, peer)) => {
                        let (gateway, stop) = (Arc::clone(&self.gateway), Arc::clone(&stop));
                        connections.push(thread::spawn(move || {
                            if let Err(e) = serve_connection(stream, &gateway, &stop) {
                                log::debug!("connection {peer} closed: {e}");
                            }
                        }));
                        connections.retain(|h| !h.is_finished());
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(25)),
                    Err(e) => {
                        log::error!("accept failed: {e}");
                        thread::sleep(Duration::from_millis(100));
                    }
                }
            }
            for c in connections {
                let _ = c.join();
            }
        })
    }
}

fn serve_connection(stream: TcpStream, gateway: &ChatGateway, stop: &AtomicBool) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) if buf.ends_with(b"\n") => {}
            Ok(_) => return Ok(()),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if buf.len() > MAX_LINE_BYTES {
                    return Err(io::Error::new(ErrorKind::InvalidData, "line too long"));
                }
                continue;
            }
            Err(e) => return Err(e),
        }
        let line = std::mem::take(&mut buf);
        let mut write_err = None;
        let mut emit = |env: ChatEnvelope| {
            if write_err.is_some() {
                return;
            }
            let mut out = serde_json::to_vec(&env).expect("envelopes serialize");
            out.push(b'\n');
            if let Err(e) = writer.write_all(&out).and_then(|_| writer.flush()) {
                write_err = Some(e);
            }
        };
        if line.len() > MAX_LINE_BYTES {
            emit(ChatEnvelope::error("", None, "envelope too large"));
        } else {
            match std::str::from_utf8(&line) {
                Ok(text) if text.trim().is_empty() => {}
                Ok(text) => gateway.handle_line(text.trim_end(), &mut emit),
                Err(_) => emit(ChatEnvelope::error("", None, "envelope is not UTF-8")),
            }
        }
        if let Some(e) = write_err {
            return Err(e);
        }
    }
}
