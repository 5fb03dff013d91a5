//! Answers for building-specific questions, computed directly from the
//! knowledge base. Every number in an answer is a stored value rendered
//! at two decimals; nothing is derived or estimated.

use super::answer::{format_number, Answer};
use super::query::{StructuredQuery, MONTH_NAMES};
use crate::error::Error;
use crate::knowledge::{BuildingField, EndUse, FieldValue, KnowledgeBase};

fn month_name(month: u32) -> &'static str {
    MONTH_NAMES[(month as usize - 1).min(11)]
}

fn field_phrase(field: BuildingField) -> &'static str {
    match field {
        BuildingField::NormalHouseholdEui => "normal household energy use intensity (EUI)",
        BuildingField::HeatElectricityDeduction => "deduction in household heat electricity",
        BuildingField::DeclaredEnergyClass => "declared energy class",
    }
}

fn end_use_phrase(end_use: Option<EndUse>) -> &'static str {
    match end_use {
        None => "energy use",
        Some(EndUse::LaundryRoom) => "electricity use in the laundry room",
        Some(EndUse::HotWater) => "energy use for hot water",
        Some(EndUse::DistrictHeating) => "district heating use",
        Some(EndUse::HouseholdElectricity) => "household electricity use",
        Some(EndUse::PropertyElectricity) => "property electricity use",
        Some(EndUse::Other) => "energy use for other purposes",
    }
}

fn join_and<T: ToString>(items: &[T]) -> String {
    let items: Vec<String> = items.iter().map(ToString::to_string).collect();
    match items.as_slice() {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// The noun phrase a refusal for `q` talks about. Only numbers that were
/// part of the question (building id, years) can appear in it.
pub fn query_topic(q: &StructuredQuery) -> String {
    match q {
        StructuredQuery::FieldLookup { building_id, field } => {
            format!("the {} for building id {building_id}", field_phrase(*field))
        }
        StructuredQuery::MonthlyBreakdown {
            building_id,
            year,
            month,
            end_use,
        } => format!(
            "the {} for building id {building_id} in {} {year}",
            end_use_phrase(*end_use),
            month_name(*month)
        ),
        StructuredQuery::PeriodAggregation {
            building_id,
            end_use,
            months,
            years,
        } => {
            let mut topic = format!("the total {} for building id {building_id}", end_use_phrase(*end_use));
            match months.as_slice() {
                [] => {}
                [m] => topic += &format!(" for the month of {}", month_name(*m)),
                many => {
                    let names: Vec<&str> = many.iter().map(|m| month_name(*m)).collect();
                    topic += &format!(" for the months of {}", join_and(&names));
                }
            }
            if years.is_empty() {
                topic += " for every year";
            } else {
                topic += &format!(" in {}", join_and(years));
            }
            topic
        }
    }
}

pub(crate) fn answer_structured(kb: &KnowledgeBase, q: &StructuredQuery, query_id: &str) -> Answer {
    let refuse = |reason: String| Answer::refusal(query_id, &query_topic(q), reason);
    let unavailable = |e: Error| match e {
        Error::NotFound(_) | Error::DataUnavailable(_) => refuse(e.to_string()),
        other => refuse(format!("lookup failed: {other}")),
    };

    match q {
        StructuredQuery::FieldLookup { building_id, field } => match kb.lookup_building_field(*building_id, *field) {
            Ok(FieldValue::Quantity { value, unit }) => Answer::structured(
                query_id,
                format!(
                    "The {} for building id {building_id} is {} {}.",
                    field_phrase(*field),
                    format_number(value),
                    unit.symbol()
                ),
            ),
            Ok(FieldValue::Class(class)) => Answer::structured(
                query_id,
                format!("The {} for building id {building_id} is {class}.", field_phrase(*field)),
            ),
            Err(e) => unavailable(e),
        },
        StructuredQuery::MonthlyBreakdown {
            building_id,
            year,
            month,
            end_use,
        } => {
            let breakdown = match kb.monthly_breakdown(*building_id, *year, *month) {
                Ok(b) => b,
                Err(e) => return unavailable(e),
            };
            let when = format!("{} {year}", month_name(*month));
            match end_use {
                Some(use_) => match breakdown.get(use_) {
                    Some(kwh) => Answer::structured(
                        query_id,
                        format!(
                            "The {} for building id {building_id} in {when} was {} kWh.",
                            end_use_phrase(Some(*use_)),
                            format_number(*kwh)
                        ),
                    ),
                    None => refuse(format!("no {} reading for building id {building_id} in {when}", use_.key())),
                },
                None => {
                    let parts: Vec<String> = breakdown
                        .iter()
                        .map(|(use_, kwh)| format!("{}: {} kWh", use_.label(), format_number(*kwh)))
                        .collect();
                    Answer::structured(
                        query_id,
                        format!(
                            "Energy use for building id {building_id} in {when} by end use: {}.",
                            parts.join("; ")
                        ),
                    )
                }
            }
        }
        StructuredQuery::PeriodAggregation { .. } => refuse("aggregation over several periods is not supported".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rag::answer::{refusal_text, AnswerKind};

    fn kb() -> KnowledgeBase {
        let kb = KnowledgeBase::in_memory();
        let buildings = "building_id,declared_energy_class,normal_household_eui,heat_electricity_deduction\n\
            5,D,30.00,\n11,C,28.10,41755.50\n";
        let readings = "building_id,year,month,end_use,kwh\n\
            5,2023,8,laundry_room,118.40\n5,2023,8,hot_water,802\n5,2022,8,laundry_room,121.00\n";
        kb.ingest_building_data_from(buildings.as_bytes(), Some(readings.as_bytes())).unwrap();
        kb
    }

    #[test]
    fn eui_answer_matches_expected_wording() {
        let q = StructuredQuery::FieldLookup {
            building_id: 5,
            field: BuildingField::NormalHouseholdEui,
        };
        let a = answer_structured(&kb(), &q, "q-1");
        assert_eq!(a.kind, AnswerKind::Structured);
        assert_eq!(a.text, "The normal household energy use intensity (EUI) for building id 5 is 30.00 kWh/m².");
        assert_eq!(a.query_id, "q-1");
    }

    #[test]
    fn deduction_answer_contains_value() {
        let q = StructuredQuery::FieldLookup {
            building_id: 11,
            field: BuildingField::HeatElectricityDeduction,
        };
        let a = answer_structured(&kb(), &q, "q-2");
        assert!(a.text.contains("41755.50"), "{}", a.text);
    }

    #[test]
    fn aggregation_is_refused_with_reference_wording() {
        let q = StructuredQuery::PeriodAggregation {
            building_id: 5,
            end_use: Some(EndUse::LaundryRoom),
            months: vec![8],
            years: vec![],
        };
        let a = answer_structured(&kb(), &q, "q-3");
        assert_eq!(a.kind, AnswerKind::Refusal);
        assert_eq!(
            a.text,
            "I'm sorry, but the context provided does not contain information about the total electricity use in the laundry room for building id 5 for the month of August for every year."
        );
    }

    #[test]
    fn missing_data_is_refused() {
        let kb = kb();
        let missing_field = StructuredQuery::FieldLookup {
            building_id: 5,
            field: BuildingField::HeatElectricityDeduction,
        };
        let a = answer_structured(&kb, &missing_field, "q");
        assert_eq!(a.text, refusal_text("the deduction in household heat electricity for building id 5"));

        let unknown = StructuredQuery::FieldLookup {
            building_id: 999,
            field: BuildingField::NormalHouseholdEui,
        };
        assert!(answer_structured(&kb, &unknown, "q").is_refusal());

        let no_month = StructuredQuery::MonthlyBreakdown {
            building_id: 5,
            year: 2019,
            month: 1,
            end_use: None,
        };
        let a = answer_structured(&kb, &no_month, "q");
        assert_eq!(a.text, refusal_text("the energy use for building id 5 in January 2019"));
    }

    #[test]
    fn breakdown_lists_every_end_use() {
        let q = StructuredQuery::MonthlyBreakdown {
            building_id: 5,
            year: 2023,
            month: 8,
            end_use: None,
        };
        let a = answer_structured(&kb(), &q, "q");
        assert_eq!(
            a.text,
            "Energy use for building id 5 in August 2023 by end use: hot water: 802.00 kWh; laundry room: 118.40 kWh."
        );
        let q = StructuredQuery::MonthlyBreakdown {
            building_id: 5,
            year: 2023,
            month: 8,
            end_use: Some(EndUse::LaundryRoom),
        };
        assert!(answer_structured(&kb(), &q, "q").text.ends_with("was 118.40 kWh."));
    }

    #[test]
    fn topic_lists() {
        let q = StructuredQuery::PeriodAggregation {
            building_id: 2,
            end_use: None,
            months: vec![6, 7, 8],
            years: vec![2022, 2023],
        };
        assert_eq!(
            query_topic(&q),
            "the total energy use for building id 2 for the months of June, July and August in 2022 and 2023"
        );
    }
}
