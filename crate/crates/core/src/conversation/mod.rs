//! Chat transcripts with inactivity flushing, age-based purging, and
//! pseudonymous participant tokens.

mod pseudonym;
mod store;

pub use pseudonym::{contains_email_address, Pseudonymizer, MIN_KEY_LEN, PSEUDONYM_KEY_ENV};
pub use store::{
    validate_conversation_id, ChatMessage, Conversation, ConversationStore, RetentionPolicy, Role,
    CONVERSATIONS_FILE, PURGE_AUDIT_FILE,
};
