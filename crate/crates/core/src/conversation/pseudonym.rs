use std::fmt;
use std::sync::LazyLock;

use hmac::{Hmac, KeyInit, Mac};
use regex::Regex;
use sha2::Sha256;

use crate::error::{Error, Result};

pub const PSEUDONYM_KEY_ENV: &str = "ADVISOR_PSEUDONYM_KEY";
pub const MIN_KEY_LEN: usize = 16;

static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)[a-z0-9._%+-]+@[a-z0-9-]+(?:\.[a-z0-9-]+)*\.[a-z]{2,}").unwrap());

/// True when `text` contains something shaped like an email address.
pub fn contains_email_address(text: &str) -> bool {
    EMAIL.is_match(text)
}

/// Keyed one-way mapping from user identifiers to stable tokens.
#[derive(Clone)]
pub struct Pseudonymizer {
    key: Vec<u8>,
}

impl fmt::Debug for Pseudonymizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Pseudonymizer { key: <redacted> }")
    }
}

impl Pseudonymizer {
    pub fn new(key: impl Into<Vec<u8>>) -> Result<Self> {
        let key = key.into();
        if key.len() < MIN_KEY_LEN {
            return Err(Error::Config(format!(
                "pseudonymization key must be at least {MIN_KEY_LEN} bytes"
            )));
        }
        Ok(Self { key })
    }

    /// Reads the key from the process environment. The key is never read from config files.
    pub fn from_env() -> Result<Self> {
        match std::env::var(PSEUDONYM_KEY_ENV) {
            Ok(k) if !k.is_empty() => Self::new(k),
            _ => Err(Error::Config(format!("{PSEUDONYM_KEY_ENV} is not set"))),
        }
    }

    /// `p-` followed by 32 hex digits of HMAC-SHA256 over the trimmed,
    /// lowercased identifier.
    pub fn pseudonymize(&self, identifier: &str) -> Result<String> {
        let normalized = identifier.trim().to_lowercase();
        if normalized.is_empty() {
            return Err(Error::validation("identifier must not be empty"));
        }
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.key).expect("HMAC accepts any key length");
        mac.update(normalized.as_bytes());
        let digest = mac.finalize().into_bytes();
        let mut token = String::from("p-");
        for b in &digest[..16] {
            token.push_str(&format!("{b:02x}"));
        }
        Ok(token)
    }

    /// Replaces every email address in `text` with its token.
    pub fn scrub(&self, text: &str) -> String {
        EMAIL
            .replace_all(text, |c: &regex::Captures<'_>| {
                self.pseudonymize(&c[0]).expect("regex match is non-empty")
            })
            .into_owned()
    }
}
