use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use chrono::Utc;
use regex::Regex;
use serde::Serialize;

use super::rating::{ExpertRating, RatingStore};
use crate::conversation::{ConversationStore, Role};
use crate::error::{Error, Result};
use crate::knowledge::write_atomic;
use crate::queue::{Channel, JobQueue, JobStatus};
use crate::rag::Answer;

pub const ARCHIVE_DIR: &str = "archive";
pub const QUARANTINE_DIR: &str = "quarantine";
pub const FOOTER_PREFIX: &str = "query-id: ";

static ADDRESS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,}$").unwrap());
static RATING_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^rating:\s*(\S+)\s*$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundEmail {
    pub message_id: String,
    pub from_addr: String,
    pub subject: String,
    pub body: String,
    pub in_reply_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutboundEmail {
    pub message_id: String,
    pub in_reply_to: String,
    pub to_addr: String,
    pub subject: String,
    pub body: String,
}

impl OutboundEmail {
    pub fn render(&self) -> String {
        format!(
            "Message-ID: {}\nTo: {}\nSubject: {}\nIn-Reply-To: {}\n\n{}\n",
            self.message_id,
            self.to_addr,
            self.subject,
            self.in_reply_to,
            self.body.trim_end()
        )
    }

    /// The query id from the `query-id:` footer, if present.
    pub fn query_id(&self) -> Option<&str> {
        footer_query_id(&self.body)
    }
}

fn footer_query_id(body: &str) -> Option<&str> {
    body.lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix(FOOTER_PREFIX))
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

/// Headers, a blank line, then the body. Header names are case-insensitive
/// and indented lines continue the previous header.
fn parse_headers(text: &str) -> Result<(Vec<(String, String)>, String)> {
    let text = text.replace("\r\n", "\n");
    let (head, body) = text
        .split_once("\n\n")
        .unwrap_or((text.trim_end_matches('\n'), ""));
    let mut headers: Vec<(String, String)> = Vec::new();
    for (i, line) in head.lines().enumerate() {
        if line.starts_with([' ', '\t']) {
            let Some(last) = headers.last_mut() else {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "continuation line before any header".into(),
                });
            };
            last.1.push(' ');
            last.1.push_str(line.trim());
            continue;
        }
        let (name, value) = line.split_once(':').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("malformed header line {line:?}"),
        })?;
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("malformed header name {name:?}"),
            });
        }
        headers.push((name.to_ascii_lowercase(), value.trim().to_string()));
    }
    Ok((headers, body.to_string()))
}

fn header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.as_str())
        .filter(|v| !v.is_empty())
}

/// `Anna <anna@x.se>` and `anna@x.se` both yield `anna@x.se`.
fn bare_address(value: &str) -> Option<String> {
    let addr = match (value.rfind('<'), value.rfind('>')) {
        (Some(a), Some(b)) if a < b => &value[a + 1..b],
        _ => value,
    };
    let addr = addr.trim();
    ADDRESS.is_match(addr).then(|| addr.to_string())
}

pub fn parse_inbound(text: &str) -> Result<InboundEmail> {
    let (headers, body) = parse_headers(text)?;
    let missing = |h: &str| Error::Parse {
        line: 1,
        message: format!("missing {h} header"),
    };
    let message_id = header(&headers, "message-id").ok_or_else(|| missing("Message-ID"))?;
    let from = header(&headers, "from").ok_or_else(|| missing("From"))?;
    let from_addr = bare_address(from).ok_or_else(|| Error::Parse {
        line: 1,
        message: format!("From header {from:?} is not a valid address"),
    })?;
    Ok(InboundEmail {
        message_id: message_id.to_string(),
        from_addr,
        subject: header(&headers, "subject").unwrap_or("").to_string(),
        body,
        in_reply_to: header(&headers, "in-reply-to").map(str::to_string),
    })
}

pub fn parse_outbound(text: &str) -> Result<OutboundEmail> {
    let (headers, body) = parse_headers(text)?;
    let get = |h: &str, label: &str| {
        header(&headers, h).map(str::to_string).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing {label} header"),
        })
    };
    Ok(OutboundEmail {
        message_id: get("message-id", "Message-ID")?,
        in_reply_to: get("in-reply-to", "In-Reply-To")?,
        to_addr: get("to", "To")?,
        subject: header(&headers, "subject").unwrap_or("").to_string(),
        body,
    })
}

/// Body lines before the signature separator, without quoted lines.
fn unquoted_lines(body: &str) -> impl Iterator<Item = &str> {
    body.lines()
        .take_while(|l| l.trim_end() != "--")
        .filter(|l| !l.trim_start().starts_with('>'))
}

/// The question in a mail: body with quoted lines and signature removed,
/// falling back to the subject.
pub fn extract_question(mail: &InboundEmail) -> Result<String> {
    let body = unquoted_lines(&mail.body).collect::<Vec<_>>().join("\n");
    let body = body.trim();
    if !body.is_empty() {
        return Ok(body.to_string());
    }
    let subject = mail.subject.trim();
    if !subject.is_empty() {
        return Ok(subject.to_string());
    }
    Err(Error::Unextractable(mail.message_id.clone()))
}

fn reply_subject(subject: &str) -> String {
    let s = subject.trim();
    if s.get(..3).is_some_and(|p| p.eq_ignore_ascii_case("re:")) {
        s.to_string()
    } else {
        format!("Re: {s}")
    }
}

fn reply_id(tag: &str, inbound_id: &str) -> String {
    let core: String = inbound_id
        .trim_matches(['<', '>'])
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("<{tag}-{core}@advisor.local>")
}

/// Answer reply: the answer text, a blank line, and a `query-id:` footer.
pub fn compose_reply(mail: &InboundEmail, answer: &Answer) -> OutboundEmail {
    OutboundEmail {
        message_id: reply_id("answer", &mail.message_id),
        in_reply_to: mail.message_id.clone(),
        to_addr: mail.from_addr.clone(),
        subject: reply_subject(&mail.subject),
        body: format!("{}\n\n{FOOTER_PREFIX}{}", answer.text.trim_end(), answer.query_id),
    }
}

fn compose_notice(mail: &InboundEmail, tag: &str, text: &str) -> OutboundEmail {
    OutboundEmail {
        message_id: reply_id(tag, &mail.message_id),
        in_reply_to: mail.message_id.clone(),
        to_addr: mail.from_addr.clone(),
        subject: reply_subject(&mail.subject),
        body: text.to_string(),
    }
}

/// The score line of a rating reply, if the mail is one: `Some(Ok(n))` for
/// an integer, `Some(Err)` for anything else after `Rating:`.
fn rating_line(mail: &InboundEmail) -> Option<Result<(i64, Option<String>)>> {
    mail.in_reply_to.as_ref()?;
    let mut lines = unquoted_lines(&mail.body).skip_while(|l| l.trim().is_empty());
    let first = lines.next()?.trim();
    let caps = RATING_LINE.captures(first)?;
    let comment = lines.collect::<Vec<_>>().join("\n").trim().to_string();
    let comment = (!comment.is_empty()).then_some(comment);
    Some(
        caps[1]
            .parse::<i64>()
            .map(|n| (n, comment))
            .map_err(|_| Error::validation(format!("rating {:?} is not a whole number from 1 to 5", &caps[1]))),
    )
}

/// Inbox, outbox, archive, and quarantine directories.
#[derive(Debug, Clone)]
pub struct Mailbox {
    inbox: PathBuf,
    outbox: PathBuf,
}

/// A mail moved to quarantine, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Quarantined {
    pub file: String,
    pub reason: String,
}

impl Mailbox {
    pub fn new(inbox: impl Into<PathBuf>, outbox: impl Into<PathBuf>) -> Result<Self> {
        let mb = Self {
            inbox: inbox.into(),
            outbox: outbox.into(),
        };
        for d in [mb.inbox.clone(), mb.archive_dir(), mb.quarantine_dir(), mb.outbox.clone()] {
            fs::create_dir_all(&d).map_err(|e| Error::file(&d, e))?;
        }
        Ok(mb)
    }

    pub fn archive_dir(&self) -> PathBuf {
        self.inbox.join(ARCHIVE_DIR)
    }

    pub fn quarantine_dir(&self) -> PathBuf {
        self.inbox.join(QUARANTINE_DIR)
    }

    pub fn outbox(&self) -> &Path {
        &self.outbox
    }

    /// Parses every file in the inbox once, in file-name order. Parsed mails
    /// move to the archive; unreadable or malformed ones to quarantine.
    pub fn poll(&self) -> Result<(Vec<InboundEmail>, Vec<Quarantined>)> {
        let mut files: Vec<PathBuf> = fs::read_dir(&self.inbox)
            .map_err(|e| Error::file(&self.inbox, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_ok_and(|t| t.is_file()))
            .map(|e| e.path())
            .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
            .collect();
        files.sort();
        let mut seen = HashSet::new();
        let (mut mails, mut quarantined) = (Vec::new(), Vec::new());
        for path in files {
            let parsed = fs::read_to_string(&path)
                .map_err(|e| Error::file(&path, e))
                .and_then(|t| parse_inbound(&t))
                .and_then(|m| {
                    if !seen.insert(m.message_id.clone()) || self.archive_has(&m.message_id) {
                        Err(Error::Conflict(format!("duplicate Message-ID {}", m.message_id)))
                    } else {
                        Ok(m)
                    }
                });
            match parsed {
                Ok(mail) => {
                    self.move_into(&path, &self.archive_dir())?;
                    mails.push(mail);
                }
                Err(e) => {
                    log::warn!("quarantining {}: {e}", path.display());
                    let file = self.move_into(&path, &self.quarantine_dir())?;
                    let reason_path = self.quarantine_dir().join(format!("{file}.reason"));
                    fs::write(&reason_path, format!("{e}\n")).map_err(|e| Error::file(&reason_path, e))?;
                    quarantined.push(Quarantined {
                        file,
                        reason: e.to_string(),
                    });
                }
            }
        }
        Ok((mails, quarantined))
    }

    fn archive_has(&self, message_id: &str) -> bool {
        let Ok(entries) = fs::read_dir(self.archive_dir()) else { return false };
        entries.filter_map(|e| e.ok()).any(|e| {
            fs::read_to_string(e.path())
                .ok()
                .and_then(|t| parse_inbound(&t).ok())
                .is_some_and(|m| m.message_id == message_id)
        })
    }

    fn move_into(&self, file: &Path, dir: &Path) -> Result<String> {
        let name = file.file_name().expect("inbox entries have names").to_string_lossy().into_owned();
        let mut target = dir.join(&name);
        let mut n = 1;
        while target.exists() {
            target = dir.join(format!("{name}.{n}"));
            n += 1;
        }
        fs::rename(file, &target).map_err(|e| Error::file(file, e))?;
        Ok(target.file_name().expect("has name").to_string_lossy().into_owned())
    }

    pub fn write_outbound(&self, mail: &OutboundEmail) -> Result<PathBuf> {
        let name: String = mail
            .message_id
            .trim_matches(['<', '>'])
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
            .collect();
        let path = self.outbox.join(format!("{name}.eml"));
        let text = mail.render();
        write_atomic(&path, |w| Ok(std::io::Write::write_all(w, text.as_bytes())?))?;
        Ok(path)
    }

    pub fn outbound(&self) -> Result<Vec<OutboundEmail>> {
        let mut out = Vec::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.outbox)
            .map_err(|e| Error::file(&self.outbox, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "eml"))
            .collect();
        paths.sort();
        for p in paths {
            let text = fs::read_to_string(&p).map_err(|e| Error::file(&p, e))?;
            match parse_outbound(&text) {
                Ok(m) => out.push(m),
                Err(e) => log::warn!("skipping unreadable outbox file {}: {e}", p.display()),
            }
        }
        Ok(out)
    }

    pub fn find_outbound(&self, message_id: &str) -> Result<Option<OutboundEmail>> {
        Ok(self.outbound()?.into_iter().find(|m| m.message_id == message_id))
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PollReport {
    /// Query ids answered by mail.
    pub answered: Vec<String>,
    pub ratings: Vec<ExpertRating>,
    /// Message ids that received a clarification or bounce instead of an answer.
    pub clarifications: Vec<String>,
    pub quarantined: Vec<Quarantined>,
    /// Query ids still waiting for a result; retried on the next poll.
    pub waiting: Vec<String>,
}

/// Email workflow: questions in, answers out, rating replies recorded.
pub struct EmailChannel {
    mailbox: Mailbox,
    queue: Arc<JobQueue>,
    conversations: Arc<ConversationStore>,
    ratings: Arc<RatingStore>,
    job_timeout: Duration,
    waiting: std::sync::Mutex<Vec<(InboundEmail, String)>>,
}

impl EmailChannel {
    pub fn new(
        mailbox: Mailbox,
        queue: Arc<JobQueue>,
        conversations: Arc<ConversationStore>,
        ratings: Arc<RatingStore>,
        job_timeout: Duration,
    ) -> Self {
        Self {
            mailbox,
            queue,
            conversations,
            ratings,
            job_timeout,
            waiting: std::sync::Mutex::default(),
        }
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    /// Handles everything currently in the inbox. Questions are enqueued
    /// together and answered as their results arrive. Every mail ends up
    /// answered, bounced with an explanation, or quarantined.
    pub fn process_inbox(&self) -> Result<PollReport> {
        let (mails, quarantined) = self.mailbox.poll()?;
        let mut report = PollReport {
            quarantined,
            ..PollReport::default()
        };
        let mut waiting = std::mem::take(&mut *self.waiting.lock().unwrap_or_else(|p| p.into_inner()));
        for mail in mails {
            if let Some(parsed) = rating_line(&mail) {
                match parsed.and_then(|(score, comment)| self.ingest_rating(&mail, score, comment)) {
                    Ok(rating) => {
                        let text = format!(
                            "Thank you. Your rating of {} for query {} has been recorded.",
                            rating.score, rating.query_id
                        );
                        self.mailbox.write_outbound(&compose_notice(&mail, "rating", &text))?;
                        report.ratings.push(rating);
                    }
                    Err(e) => {
                        let text = format!(
                            "Your rating could not be recorded: {e}\n\nPlease reply to an answer with a first line such as \"Rating: 4\" (a whole number from 1 to 5)."
                        );
                        self.mailbox.write_outbound(&compose_notice(&mail, "bounce", &text))?;
                        report.clarifications.push(mail.message_id.clone());
                    }
                }
                continue;
            }
            let question = match extract_question(&mail) {
                Ok(q) => self.conversations.pseudonymizer().scrub(&q),
                Err(_) => {
                    let text = "We could not find a question in your message. Please write your question in the body of the email.";
                    self.mailbox.write_outbound(&compose_notice(&mail, "clarify", text))?;
                    report.clarifications.push(mail.message_id.clone());
                    continue;
                }
            };
            let conversation_id = self.conversation_for(&mail.from_addr)?;
            self.conversations.open_conversation(&conversation_id, &mail.from_addr)?;
            let (query_id, _) = self
                .queue
                .submit(Channel::Email, question.as_str(), Some(conversation_id.clone()))?;
            self.conversations
                .append_message(&conversation_id, Role::User, &question, Some(&query_id))?;
            waiting.push((mail, query_id));
        }

        let mut still_waiting = Vec::new();
        for (mail, query_id) in waiting {
            match self.queue.wait_result(&query_id, self.job_timeout)? {
                JobStatus::Completed(result) => {
                    let reply = compose_reply(&mail, &result.answer);
                    self.mailbox.write_outbound(&reply)?;
                    if let Some(cid) = self.queue.job(&query_id).and_then(|j| j.conversation_id) {
                        self.conversations
                            .append_message(&cid, Role::Agent, &result.answer.text, Some(&query_id))?;
                    }
                    report.answered.push(query_id);
                }
                JobStatus::DeadLetter { .. } => {
                    let text = format!(
                        "We were unable to answer your question. An advisor has been notified.\n\n{FOOTER_PREFIX}{query_id}"
                    );
                    self.mailbox.write_outbound(&compose_notice(&mail, "failed", &text))?;
                    report.clarifications.push(mail.message_id.clone());
                }
                JobStatus::Pending => {
                    report.waiting.push(query_id.clone());
                    still_waiting.push((mail, query_id));
                }
            }
        }
        *self.waiting.lock().unwrap_or_else(|p| p.into_inner()) = still_waiting;
        Ok(report)
    }

    fn conversation_for(&self, from_addr: &str) -> Result<String> {
        Ok(format!("email:{}", self.conversations.pseudonymizer().pseudonymize(from_addr)?))
    }

    fn ingest_rating(&self, mail: &InboundEmail, score: i64, comment: Option<String>) -> Result<ExpertRating> {
        let replied_to = mail.in_reply_to.as_deref().unwrap_or_default();
        let outbound = self
            .mailbox
            .find_outbound(replied_to)?
            .ok_or_else(|| Error::NotFound(format!("no answer with Message-ID {replied_to}")))?;
        let query_id = outbound
            .query_id()
            .ok_or_else(|| Error::NotFound(format!("message {replied_to} carries no query id")))?
            .to_string();
        let score = u8::try_from(score)
            .ok()
            .filter(|s| (1..=5).contains(s))
            .ok_or_else(|| Error::validation(format!("score {score} outside 1-5")))?;
        self.ratings.record(
            ExpertRating {
                query_id,
                score,
                comment,
                rater: self.conversations.pseudonymizer().pseudonymize(&mail.from_addr)?,
                channel: Channel::Email,
                rated_at: Utc::now(),
            },
            &self.queue,
        )
    }
}

/// Renders an inbound mail in the file format the inbox expects.
pub fn render_inbound(mail: &InboundEmail) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Message-ID: {}", mail.message_id);
    let _ = writeln!(out, "From: {}", mail.from_addr);
    let _ = writeln!(out, "Subject: {}", mail.subject);
    if let Some(r) = &mail.in_reply_to {
        let _ = writeln!(out, "In-Reply-To: {r}");
    }
    out.push('\n');
    out.push_str(&mail.body);
    out
}
