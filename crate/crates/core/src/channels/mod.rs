//! User-facing channels: a newline-delimited JSON chat gateway and a
//! file-based email workflow, plus the rating store both feed.

mod chat;
mod email;
mod rating;

pub use chat::{ChatEnvelope, ChatGateway, ChatServer, EnvelopeType, MAX_LINE_BYTES};
pub use email::{
    compose_reply, extract_question, parse_inbound, parse_outbound, render_inbound, EmailChannel, InboundEmail,
    Mailbox, OutboundEmail, PollReport, Quarantined, ARCHIVE_DIR, FOOTER_PREFIX, QUARANTINE_DIR,
};
pub use rating::{ExpertRating, RatingStore, RATINGS_FILE};
