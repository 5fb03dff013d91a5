use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rag::is_refusal_text;

pub const DEFAULT_TOLERANCE: f64 = 1e-6;

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"-?[0-9]+(?:\.[0-9]+)?").unwrap());

/// How an expected refusal is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// A refusal never counts as a correct answer.
    #[default]
    Strict,
    /// A refusal is correct when the reference expects one.
    Policy,
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "strict" => Ok(Self::Strict),
            "policy" => Ok(Self::Policy),
            other => Err(Error::Config(format!("unknown scoring mode {other:?} (strict|policy)"))),
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Strict => "strict",
            Self::Policy => "policy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub correct: bool,
    pub detail: String,
}

impl Verdict {
    fn new(correct: bool, detail: impl Into<String>) -> Self {
        Self {
            correct,
            detail: detail.into(),
        }
    }
}

/// Decimal literals in `text`, in order. Thousands separators are not recognized.
pub fn extract_numbers(text: &str) -> Vec<f64> {
    NUMBER
        .find_iter(text)
        .filter_map(|m| m.as_str().parse().ok())
        .collect()
}

/// What a numeric reference answer asks for.
#[derive(Debug, Clone, PartialEq)]
pub enum Expected {
    Numbers(Vec<f64>),
    Refusal,
}

/// A reference is either a refusal or contains at least one number.
pub fn parse_reference(reference: &str) -> Result<Expected> {
    if is_refusal_text(reference) {
        return Ok(Expected::Refusal);
    }
    let numbers = extract_numbers(reference);
    if numbers.is_empty() {
        return Err(Error::validation(format!("numeric reference {reference:?} contains no number")));
    }
    Ok(Expected::Numbers(numbers))
}

fn within(expected: f64, actual: f64, tolerance: f64) -> bool {
    expected == actual || (expected - actual).abs() <= tolerance * expected.abs()
}

pub fn score_numeric(reference: &str, generated: &str, tolerance: f64, mode: ScoringMode) -> Result<Verdict> {
    let refused = is_refusal_text(generated);
    Ok(match parse_reference(reference)? {
        Expected::Refusal => match (refused, mode) {
            (true, ScoringMode::Policy) => Verdict::new(true, "expected refusal"),
            (true, ScoringMode::Strict) => Verdict::new(false, "refusal (counted incorrect in strict mode)"),
            (false, _) => Verdict::new(false, "answered where a refusal was expected"),
        },
        Expected::Numbers(_) if refused => Verdict::new(false, "refused an answerable question"),
        Expected::Numbers(expected) => {
            let found = extract_numbers(generated);
            let missing: Vec<String> = expected
                .iter()
                .filter(|&&e| !found.iter().any(|&g| within(e, g, tolerance)))
                .map(|e| e.to_string())
                .collect();
            if missing.is_empty() {
                Verdict::new(true, "all reference numbers present")
            } else {
                Verdict::new(false, format!("missing {}", missing.join(" ")))
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rag::refusal_text;

    #[test]
    fn extracts_decimals() {
        assert_eq!(extract_numbers("30.00 kWh/m² for id 5"), [30.0, 5.0]);
        assert_eq!(extract_numbers("none"), Vec::<f64>::new());
    }

    #[test]
    fn table_answers() {
        let row1 = "The normal household energy use intensity (EUI) for building id 5 is 30.00 kWh/m².";
        assert!(score_numeric("30.00 kWh/m²", row1, DEFAULT_TOLERANCE, ScoringMode::Strict).unwrap().correct);
        assert!(!score_numeric("41755.50", "41754.00", DEFAULT_TOLERANCE, ScoringMode::Strict).unwrap().correct);
        assert!(score_numeric("41755.50", "41755.49", DEFAULT_TOLERANCE, ScoringMode::Strict).unwrap().correct);
    }

    #[test]
    fn refusal_modes() {
        let r = refusal_text("the total electricity use");
        assert!(!score_numeric(&r, &r, DEFAULT_TOLERANCE, ScoringMode::Strict).unwrap().correct);
        assert!(score_numeric(&r, &r, DEFAULT_TOLERANCE, ScoringMode::Policy).unwrap().correct);
        assert!(!score_numeric(&r, "It is 12 kWh", DEFAULT_TOLERANCE, ScoringMode::Policy).unwrap().correct);
        assert!(!score_numeric("12", &r, DEFAULT_TOLERANCE, ScoringMode::Policy).unwrap().correct);
    }

    #[test]
    fn unparseable_reference() {
        assert!(score_numeric("about a lot", "x", DEFAULT_TOLERANCE, ScoringMode::Strict).is_err());
        assert!("lenient".parse::<ScoringMode>().is_err());
    }
}
