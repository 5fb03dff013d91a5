use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::pseudonym::Pseudonymizer;
use crate::clock::Clock;
use crate::error::{Error, Result};
use crate::knowledge::write_atomic;

pub const CONVERSATIONS_FILE: &str = "conversations.json";
pub const PURGE_AUDIT_FILE: &str = "purge_audit.log";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub participant_ref: String,
    pub messages: Vec<ChatMessage>,
    pub last_activity: DateTime<Utc>,
    #[serde(skip)]
    pub flushed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionPolicy {
    #[serde(with = "secs")]
    pub inactivity_flush: Duration,
    #[serde(with = "secs")]
    pub max_age: Duration,
}

impl Default for RetentionPolicy {
    fn default() -> Self {
        Self {
            inactivity_flush: Duration::from_secs(10 * 60),
            max_age: Duration::from_secs(365 * 24 * 3600),
        }
    }
}

impl RetentionPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.inactivity_flush >= self.max_age {
            return Err(Error::Config(format!(
                "inactivity_flush ({}s) must be shorter than max_age ({}s)",
                self.inactivity_flush.as_secs(),
                self.max_age.as_secs()
            )));
        }
        Ok(())
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_secs())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_secs)
    }
}

#[derive(Serialize, Deserialize)]
struct StoreFile {
    version: u32,
    conversations: Vec<Conversation>,
}

#[derive(Serialize)]
struct PurgeAudit<'a> {
    conversation_id: &'a str,
    purged_at: DateTime<Utc>,
}

/// Identifiers clients may choose: letters, digits, and `._:-`, at most 128 chars.
pub fn validate_conversation_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | ':' | '-'));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "conversation_id {id:?} must be 1-128 characters from [A-Za-z0-9._:-]"
        )))
    }
}

type Slot = Arc<Mutex<Conversation>>;

/// Transcript store. Conversations live in memory and reach disk when they
/// have been idle for the flush window (or on [`flush_all`](Self::flush_all)).
/// Email addresses in message text are replaced by pseudonymous tokens before
/// they are stored.
pub struct ConversationStore {
    dir: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    pseudonymizer: Pseudonymizer,
    live: RwLock<HashMap<String, Slot>>,
    /// What the conversations file currently holds.
    persisted: Mutex<BTreeMap<String, Conversation>>,
}

impl ConversationStore {
    pub fn in_memory(clock: Arc<dyn Clock>, pseudonymizer: Pseudonymizer) -> Self {
        Self {
            dir: None,
            clock,
            pseudonymizer,
            live: RwLock::default(),
            persisted: Mutex::default(),
        }
    }

    pub fn open(dir: impl AsRef<Path>, clock: Arc<dyn Clock>, pseudonymizer: Pseudonymizer) -> Result<Self> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let path = dir.join(CONVERSATIONS_FILE);
        let mut persisted = BTreeMap::new();
        let mut live = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
            let file: StoreFile = serde_json::from_str(&text)?;
            for mut c in file.conversations {
                c.flushed = true;
                live.insert(c.conversation_id.clone(), Arc::new(Mutex::new(c.clone())));
                persisted.insert(c.conversation_id.clone(), c);
            }
        }
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            clock,
            pseudonymizer,
            live: RwLock::new(live),
            persisted: Mutex::new(persisted),
        })
    }

    pub fn pseudonymizer(&self) -> &Pseudonymizer {
        &self.pseudonymizer
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(CONVERSATIONS_FILE))
    }

    fn slot(&self, id: &str) -> Option<Slot> {
        self.live.read().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }

    fn slot_or_create(&self, id: &str, identifier: &str) -> Result<Slot> {
        if let Some(s) = self.slot(id) {
            return Ok(s);
        }
        let participant_ref = self.pseudonymizer.pseudonymize(identifier)?;
        let mut live = self.live.write().unwrap_or_else(|p| p.into_inner());
        let slot = live.entry(id.to_string()).or_insert_with(|| {
            Arc::new(Mutex::new(Conversation {
                conversation_id: id.to_string(),
                participant_ref,
                messages: Vec::new(),
                last_activity: self.clock.now(),
                flushed: false,
            }))
        });
        Ok(Arc::clone(slot))
    }

    /// Creates the conversation if needed, recording `identifier` (for example
    /// a sender address) only as its pseudonymous token.
    pub fn open_conversation(&self, conversation_id: &str, identifier: &str) -> Result<()> {
        validate_conversation_id(conversation_id)?;
        self.slot_or_create(conversation_id, identifier).map(|_| ())
    }

    /// Appends a message, creating the conversation on first use.
    pub fn append_message(&self, conversation_id: &str, role: Role, text: &str, query_id: Option<&str>) -> Result<()> {
        validate_conversation_id(conversation_id)?;
        if text.trim().is_empty() {
            return Err(Error::validation("message text must not be empty"));
        }
        let slot = self.slot_or_create(conversation_id, conversation_id)?;
        let mut conv = lock(&slot);
        let mut timestamp = self.clock.now();
        if let Some(last) = conv.messages.last() {
            timestamp = timestamp.max(last.timestamp);
        }
        conv.messages.push(ChatMessage {
            role,
            text: self.pseudonymizer.scrub(text),
            timestamp,
            query_id: query_id.map(str::to_string),
        });
        conv.last_activity = timestamp;
        conv.flushed = false;
        Ok(())
    }

    pub fn get(&self, conversation_id: &str) -> Option<Conversation> {
        self.slot(conversation_id).map(|s| lock(&s).clone())
    }

    pub fn messages(&self, conversation_id: &str) -> Option<Vec<ChatMessage>> {
        self.slot(conversation_id).map(|s| lock(&s).messages.clone())
    }

    pub fn conversation_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.live.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Persists every unflushed conversation idle for at least the flush window.
    /// Returns how many were flushed. If the write fails nothing is marked
    /// flushed, so the next cycle retries.
    pub fn flush_inactive(&self, now: DateTime<Utc>, policy: &RetentionPolicy) -> Result<usize> {
        let window = chrono::Duration::from_std(policy.inactivity_flush)
            .map_err(|_| Error::Config("inactivity_flush out of range".into()))?;
        self.flush_where(|c| !c.flushed && now - c.last_activity >= window)
    }

    /// Persists every unflushed conversation regardless of idleness (used at shutdown).
    pub fn flush_all(&self) -> Result<usize> {
        self.flush_where(|c| !c.flushed)
    }

    fn flush_where(&self, eligible: impl Fn(&Conversation) -> bool) -> Result<usize> {
        let slots: Vec<Slot> = self.live.read().unwrap_or_else(|p| p.into_inner()).values().cloned().collect();
        let mut persisted = lock(&self.persisted);
        let mut picked = Vec::new();
        for slot in &slots {
            let conv = lock(slot);
            if eligible(&conv) {
                picked.push((Arc::clone(slot), conv.clone()));
            }
        }
        if picked.is_empty() {
            return Ok(0);
        }
        let mut next = persisted.clone();
        for (_, snapshot) in &picked {
            next.insert(snapshot.conversation_id.clone(), snapshot.clone());
        }
        self.write(&next)?;
        *persisted = next;
        for (slot, snapshot) in &picked {
            let mut conv = lock(slot);
            // a message that arrived during the write keeps the conversation dirty
            if conv.messages.len() == snapshot.messages.len() {
                conv.flushed = true;
            }
        }
        Ok(picked.len())
    }

    /// Deletes conversations whose last activity is older than `max_age`,
    /// leaving one audit line per deletion.
    pub fn purge_expired(&self, now: DateTime<Utc>, policy: &RetentionPolicy) -> Result<usize> {
        let max_age = chrono::Duration::from_std(policy.max_age)
            .map_err(|_| Error::Config("max_age out of range".into()))?;
        let mut live = self.live.write().unwrap_or_else(|p| p.into_inner());
        let expired: Vec<String> = live
            .iter()
            .filter(|(_, s)| now - lock(s).last_activity > max_age)
            .map(|(id, _)| id.clone())
            .collect();
        if expired.is_empty() {
            return Ok(0);
        }
        let mut persisted = lock(&self.persisted);
        let mut next = persisted.clone();
        for id in &expired {
            next.remove(id);
        }
        self.write(&next)?;
        *persisted = next;
        for id in &expired {
            live.remove(id);
        }
        self.audit(&expired, now)?;
        Ok(expired.len())
    }

    fn write(&self, conversations: &BTreeMap<String, Conversation>) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let file = StoreFile {
            version: 1,
            conversations: conversations.values().cloned().collect(),
        };
        write_atomic(&dir.join(CONVERSATIONS_FILE), |w| {
            serde_json::to_writer_pretty(&mut *w, &file)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn audit(&self, ids: &[String], at: DateTime<Utc>) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(PURGE_AUDIT_FILE);
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::file(&path, e))?;
        for id in ids {
            let mut line = serde_json::to_vec(&PurgeAudit {
                conversation_id: id,
                purged_at: at,
            })?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| Error::file(&path, e))?;
        }
        Ok(())
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}
