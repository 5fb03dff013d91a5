//! Keyword grammar for building-specific questions.
//!
//! A question is structured when it names a building as `building id N`
//! (also `building_id N`, `building id: N`, `building id #N`). The rest of
//! the question decides the kind:
//!
//! * no period mentioned and a field keyword (`eui` / `energy use
//!   intensity`, `deduction`, `energy class` / `class` / `energy rating`)
//!   gives a field lookup;
//! * exactly one month and one year (`August 2023`, `aug 2023`,
//!   `2023-08`) with no multi-period marker gives a monthly breakdown;
//! * anything else that asks about consumption, or mentions several
//!   months or years, or an open period (`every year`, `all years`,
//!   `annual`, `between`, ...) is a period aggregation.
//!
//! Matching is case-insensitive. Questions without a building id, or with
//! one but nothing recognizable, are not structured.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::knowledge::{BuildingField, EndUse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructuredQuery {
    FieldLookup {
        building_id: u32,
        field: BuildingField,
    },
    MonthlyBreakdown {
        building_id: u32,
        year: i32,
        month: u32,
        /// Restricts the breakdown to one end use.
        end_use: Option<EndUse>,
    },
    PeriodAggregation {
        building_id: u32,
        end_use: Option<EndUse>,
        /// Empty means every month.
        months: Vec<u32>,
        /// Empty means every year.
        years: Vec<i32>,
    },
}

impl StructuredQuery {
    pub fn building_id(&self) -> u32 {
        match *self {
            StructuredQuery::FieldLookup { building_id, .. }
            | StructuredQuery::MonthlyBreakdown { building_id, .. }
            | StructuredQuery::PeriodAggregation { building_id, .. } => building_id,
        }
    }
}

pub const MONTH_NAMES: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

static BUILDING_ID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bbuilding(?:[\s_-]*id)\s*[:#=]?\s*#?\s*(\d{1,9})\b").unwrap());
static ISO_MONTH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b((?:19|20|21)\d{2})-(0?[1-9]|1[0-2])\b").unwrap());
static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b((?:19|20|21)\d{2})\b").unwrap());
static MONTH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(january|february|march|april|june|july|august|september|october|november|december|jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec)\b\.?",
    )
    .unwrap()
});
// "may" doubles as a verb; only count it next to a year or after a preposition
static MAY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:\b(?:of|in|during|for)\s+may\b|\bmay\s+(?:19|20|21)\d{2}\b)").unwrap());
static OPEN_PERIOD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(every|each|all|per|over the|across)\s+(year|years|month|months)\b|\b(yearly|annual|annually|monthly totals?|year by year|year-by-year|between|through|until|multiple months|several months)\b|\bfrom\b.+\bto\b",
    )
    .unwrap()
});
static CONSUMPTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(total|sum|consumption|consumed|usage|use|used|breakdown|how much|average)\b").unwrap()
});
static EUI: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\beui\b|energy use intensity|energy intensity").unwrap());
static DEDUCTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bdeduction\b").unwrap());
static CLASS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\benergy\s+(class|rating|label)\b|\bclass\b|\bepc\s+rating\b").unwrap());

fn month_number(token: &str) -> Option<u32> {
    let t = token.trim_end_matches('.').to_ascii_lowercase();
    let prefix = &t[..3.min(t.len())];
    MONTH_NAMES
        .iter()
        .position(|m| m[..3].eq_ignore_ascii_case(prefix))
        .map(|i| i as u32 + 1)
}

fn detect_end_use(q: &str) -> Option<EndUse> {
    let q = q.to_lowercase();
    let table: [(&[&str], EndUse); 6] = [
        (&["laundry"], EndUse::LaundryRoom),
        (&["hot water", "tap water", "domestic water"], EndUse::HotWater),
        (&["district heating", "district heat"], EndUse::DistrictHeating),
        (&["household electricity", "household power"], EndUse::HouseholdElectricity),
        (&["property electricity", "common area", "shared area"], EndUse::PropertyElectricity),
        (&["other uses", "other end use", "other consumption"], EndUse::Other),
    ];
    table
        .iter()
        .find(|(keys, _)| keys.iter().any(|k| q.contains(k)))
        .map(|(_, e)| *e)
}

fn detect_field(q: &str) -> Option<BuildingField> {
    if DEDUCTION.is_match(q) {
        Some(BuildingField::HeatElectricityDeduction)
    } else if EUI.is_match(q) {
        Some(BuildingField::NormalHouseholdEui)
    } else if CLASS.is_match(q) {
        Some(BuildingField::DeclaredEnergyClass)
    } else {
        None
    }
}

/// Recognizes building-specific questions. `None` means the question
/// should go through retrieval instead.
pub fn parse_structured_query(question: &str) -> Option<StructuredQuery> {
    let caps = BUILDING_ID.captures(question)?;
    let building_id: u32 = caps[1].parse().ok().filter(|&id| id > 0)?;
    // blank out the id so it is never mistaken for a year
    let id_span = caps.get(0).unwrap().range();
    let rest = format!("{} {}", &question[..id_span.start], &question[id_span.end..]);

    let mut months = BTreeSet::new();
    let mut years = BTreeSet::new();
    for c in ISO_MONTH.captures_iter(&rest) {
        years.insert(c[1].parse::<i32>().unwrap());
        months.insert(c[2].parse::<u32>().unwrap());
    }
    let without_iso = ISO_MONTH.replace_all(&rest, " ");
    for c in YEAR.captures_iter(&without_iso) {
        years.insert(c[1].parse::<i32>().unwrap());
    }
    for m in MONTH.find_iter(&without_iso) {
        if let Some(n) = month_number(m.as_str()) {
            months.insert(n);
        }
    }
    if MAY.is_match(&without_iso) {
        months.insert(5);
    }

    let open_period = OPEN_PERIOD.is_match(&without_iso);
    let end_use = detect_end_use(&rest);

    if months.is_empty() && years.is_empty() && !open_period {
        if let Some(field) = detect_field(&rest) {
            return Some(StructuredQuery::FieldLookup { building_id, field });
        }
        if end_use.is_some() || CONSUMPTION.is_match(&rest) {
            return Some(StructuredQuery::PeriodAggregation {
                building_id,
                end_use,
                months: Vec::new(),
                years: Vec::new(),
            });
        }
        return None;
    }

    if months.len() == 1 && years.len() == 1 && !open_period {
        return Some(StructuredQuery::MonthlyBreakdown {
            building_id,
            year: *years.first().unwrap(),
            month: *months.first().unwrap(),
            end_use,
        });
    }

    Some(StructuredQuery::PeriodAggregation {
        building_id,
        end_use,
        months: months.into_iter().collect(),
        years: years.into_iter().collect(),
    })
}
