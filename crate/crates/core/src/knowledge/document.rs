use std::collections::HashSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where a corpus document came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentSource {
    AdvisorEmail,
    Regulation,
    Manual,
    Other,
}

/// Topic categories used to tag questions and documents.
///
/// Declaration order is the reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuestionCategory {
    Appliances,
    OperationalElectricity,
    Ventilation,
    Heating,
    TapWaterHeating,
    ControlAndRegulation,
    SolarCells,
    HouseholdElectricity,
    PropertyElectricity,
    Definitions,
    ElectricityContract,
}

impl QuestionCategory {
    pub const ALL: [QuestionCategory; 11] = [
        QuestionCategory::Appliances,
        QuestionCategory::OperationalElectricity,
        QuestionCategory::Ventilation,
        QuestionCategory::Heating,
        QuestionCategory::TapWaterHeating,
        QuestionCategory::ControlAndRegulation,
        QuestionCategory::SolarCells,
        QuestionCategory::HouseholdElectricity,
        QuestionCategory::PropertyElectricity,
        QuestionCategory::Definitions,
        QuestionCategory::ElectricityContract,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionCategory::Appliances => "Appliances",
            QuestionCategory::OperationalElectricity => "Operational electricity",
            QuestionCategory::Ventilation => "Ventilation",
            QuestionCategory::Heating => "Heating",
            QuestionCategory::TapWaterHeating => "Tap water heating",
            QuestionCategory::ControlAndRegulation => "Control and regulation",
            QuestionCategory::SolarCells => "Solar cells",
            QuestionCategory::HouseholdElectricity => "Household electricity",
            QuestionCategory::PropertyElectricity => "Property electricity",
            QuestionCategory::Definitions => "Definitions",
            QuestionCategory::ElectricityContract => "Electricity contract",
        }
    }
}

impl fmt::Display for QuestionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuestionCategory {
    type Err = Error;

    /// Case-insensitive match on the display name; anything else is rejected.
    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim();
        QuestionCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| Error::validation(format!("unknown question category {s:?}")))
    }
}

impl Serialize for QuestionCategory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for QuestionCategory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<QuestionCategory>,
    pub source: DocumentSource,
}

impl Document {
    pub fn validate(&self) -> Result<()> {
        if self.doc_id.trim().is_empty() {
            return Err(Error::validation("doc_id must not be empty"));
        }
        if self.body.is_empty() {
            return Err(Error::validation(format!("document {} has an empty body", self.doc_id)));
        }
        Ok(())
    }
}

/// Supported corpus encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    JsonLines,
}

/// Parses a JSON-lines corpus. Blank lines are skipped; every other line
/// must be one valid document. Duplicate ids inside the batch are reported
/// against the line of the second occurrence.
pub(crate) fn parse_json_lines<R: BufRead>(reader: R) -> Result<Vec<(usize, Document)>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        doc.validate().map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::Conflict(format!(
                "duplicate doc_id {:?} on line {line_no}",
                doc.doc_id
            )));
        }
        docs.push((line_no, doc));
    }
    Ok(docs)
}
