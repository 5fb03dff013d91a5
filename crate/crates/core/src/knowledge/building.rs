use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnergyClass {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
}

impl FromStr for EnergyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_uppercase().as_str() {
            "A" => EnergyClass::A,
            "B" => EnergyClass::B,
            "C" => EnergyClass::C,
            "D" => EnergyClass::D,
            "E" => EnergyClass::E,
            "F" => EnergyClass::F,
            "G" => EnergyClass::G,
            _ => return Err(Error::validation(format!("energy class must be A-G, got {s:?}"))),
        })
    }
}

impl fmt::Display for EnergyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndUse {
    DistrictHeating,
    HotWater,
    HouseholdElectricity,
    LaundryRoom,
    PropertyElectricity,
    Other,
}

impl EndUse {
    pub const ALL: [EndUse; 6] = [
        EndUse::DistrictHeating,
        EndUse::HotWater,
        EndUse::HouseholdElectricity,
        EndUse::LaundryRoom,
        EndUse::PropertyElectricity,
        EndUse::Other,
    ];

    pub fn key(self) -> &'static str {
        match self {
            EndUse::DistrictHeating => "district_heating",
            EndUse::HotWater => "hot_water",
            EndUse::HouseholdElectricity => "household_electricity",
            EndUse::LaundryRoom => "laundry_room",
            EndUse::PropertyElectricity => "property_electricity",
            EndUse::Other => "other",
        }
    }

    /// Human-readable name, e.g. "laundry room".
    pub fn label(self) -> &'static str {
        match self {
            EndUse::DistrictHeating => "district heating",
            EndUse::HotWater => "hot water",
            EndUse::HouseholdElectricity => "household electricity",
            EndUse::LaundryRoom => "laundry room",
            EndUse::PropertyElectricity => "property electricity",
            EndUse::Other => "other uses",
        }
    }
}

impl FromStr for EndUse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        EndUse::ALL
            .into_iter()
            .find(|e| e.key().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::validation(format!("unknown end_use {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReading {
    pub building_id: u32,
    pub year: i32,
    pub month: u32,
    pub end_use: EndUse,
    pub kwh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub building_id: u32,
    pub declared_energy_class: Option<EnergyClass>,
    /// kWh/m² per year.
    pub normal_household_eui: Option<f64>,
    /// kWh.
    pub heat_electricity_deduction: Option<f64>,
    pub readings: Vec<EnergyReading>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildingField {
    NormalHouseholdEui,
    HeatElectricityDeduction,
    DeclaredEnergyClass,
}

impl BuildingField {
    pub fn key(self) -> &'static str {
        match self {
            BuildingField::NormalHouseholdEui => "normal_household_eui",
            BuildingField::HeatElectricityDeduction => "heat_electricity_deduction",
            BuildingField::DeclaredEnergyClass => "declared_energy_class",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    KwhPerSquareMetre,
    Kwh,
}

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::KwhPerSquareMetre => "kWh/m²",
            Unit::Kwh => "kWh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Quantity { value: f64, unit: Unit },
    Class(EnergyClass),
}

impl BuildingRecord {
    pub fn field(&self, field: BuildingField) -> Option<FieldValue> {
        match field {
            BuildingField::NormalHouseholdEui => self.normal_household_eui.map(|value| FieldValue::Quantity {
                value,
                unit: Unit::KwhPerSquareMetre,
            }),
            BuildingField::HeatElectricityDeduction => {
                self.heat_electricity_deduction.map(|value| FieldValue::Quantity { value, unit: Unit::Kwh })
            }
            BuildingField::DeclaredEnergyClass => self.declared_energy_class.map(FieldValue::Class),
        }
    }

    /// Readings for one calendar month keyed by end use.
    pub fn month(&self, year: i32, month: u32) -> BTreeMap<EndUse, f64> {
        self.readings
            .iter()
            .filter(|r| r.year == year && r.month == month)
            .map(|r| (r.end_use, r.kwh))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct BuildingRow {
    building_id: String,
    declared_energy_class: String,
    normal_household_eui: String,
    heat_electricity_deduction: String,
}

#[derive(Debug, Deserialize)]
struct ReadingRow {
    building_id: String,
    year: String,
    month: String,
    end_use: String,
    kwh: String,
}

fn row_error(file: &str, line: u64, msg: impl fmt::Display) -> Error {
    Error::validation(format!("{file} line {line}: {msg}"))
}

fn parse_building_id(raw: &str) -> std::result::Result<u32, String> {
    match raw.trim().parse::<u32>() {
        Ok(0) | Err(_) => Err(format!("building_id must be a positive integer, got {raw:?}")),
        Ok(id) => Ok(id),
    }
}

fn parse_kwh(raw: &str, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = raw.trim().parse().map_err(|_| format!("{name} is not a number: {raw:?}"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("{name} must be a finite non-negative number, got {raw}"));
    }
    Ok(v)
}

fn optional<T>(raw: &str, parse: impl FnOnce(&str) -> std::result::Result<T, String>) -> std::result::Result<Option<T>, String> {
    if raw.trim().is_empty() {
        Ok(None)
    } else {
        parse(raw).map(Some)
    }
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

/// Parses `buildings.csv`. Empty cells mean the datum is unknown for that
/// building. Readings are left empty.
pub(crate) fn parse_buildings<R: Read>(r: R) -> Result<Vec<BuildingRecord>> {
    const FILE: &str = "buildings.csv";
    let mut rdr = csv_reader(r);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let headers = rdr.headers()?.clone();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: BuildingRow = record.deserialize(Some(&headers))?;
        let err = |m: String| row_error(FILE, line, m);
        let building_id = parse_building_id(&row.building_id).map_err(err)?;
        if !seen.insert(building_id) {
            return Err(Error::Conflict(format!("{FILE} line {line}: duplicate building_id {building_id}")));
        }
        let declared_energy_class = optional(&row.declared_energy_class, |s| {
            s.parse::<EnergyClass>().map_err(|e| e.to_string())
        })
        .map_err(err)?;
        let normal_household_eui = optional(&row.normal_household_eui, |s| parse_kwh(s, "normal_household_eui")).map_err(err)?;
        let heat_electricity_deduction =
            optional(&row.heat_electricity_deduction, |s| parse_kwh(s, "heat_electricity_deduction")).map_err(err)?;
        out.push(BuildingRecord {
            building_id,
            declared_energy_class,
            normal_household_eui,
            heat_electricity_deduction,
            readings: Vec::new(),
        });
    }
    Ok(out)
}

pub(crate) fn parse_readings<R: Read>(r: R) -> Result<Vec<EnergyReading>> {
    const FILE: &str = "readings.csv";
    let mut rdr = csv_reader(r);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let headers = rdr.headers()?.clone();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row: ReadingRow = record.deserialize(Some(&headers))?;
        let err = |m: String| row_error(FILE, line, m);
        let building_id = parse_building_id(&row.building_id).map_err(err)?;
        let year: i32 = row
            .year
            .parse()
            .map_err(|_| err(format!("year is not an integer: {:?}", row.year)))?;
        let month: u32 = row
            .month
            .parse()
            .map_err(|_| err(format!("month is not an integer: {:?}", row.month)))?;
        if !(1..=12).contains(&month) {
            return Err(err(format!("month must be in 1-12, got {month}")));
        }
        let end_use: EndUse = row.end_use.parse().map_err(|e: Error| err(e.to_string()))?;
        let kwh = parse_kwh(&row.kwh, "kwh").map_err(err)?;
        if !seen.insert((building_id, year, month, end_use)) {
            return Err(Error::Conflict(format!(
                "{FILE} line {line}: duplicate reading for building {building_id}, {year}-{month:02}, {}",
                end_use.key()
            )));
        }
        out.push(EnergyReading {
            building_id,
            year,
            month,
            end_use,
            kwh,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "building_id,year,month,end_use,kwh\n";

    #[test]
    fn month_thirteen_is_rejected() {
        let input = format!("{HEADER}5,2023,13,hot_water,10\n");
        let err = parse_readings(input.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("line 2") && m.contains("month")), "{err}");
    }

    #[test]
    fn negative_kwh_is_rejected() {
        let input = format!("{HEADER}5,2023,1,hot_water,10\n5,2023,2,hot_water,-1\n");
        let err = parse_readings(input.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("line 3")), "{err}");
    }

    #[test]
    fn duplicate_reading_key_conflicts() {
        let input = format!("{HEADER}5,2023,1,hot_water,10\n5,2023,1,hot_water,11\n");
        assert!(matches!(parse_readings(input.as_bytes()), Err(Error::Conflict(_))));
    }

    #[test]
    fn blank_cells_are_unknown_values() {
        let input = "building_id,declared_energy_class,normal_household_eui,heat_electricity_deduction\n7,,12.5,\n";
        let rec = &parse_buildings(input.as_bytes()).unwrap()[0];
        assert_eq!(rec.declared_energy_class, None);
        assert_eq!(rec.normal_household_eui, Some(12.5));
        assert_eq!(rec.field(BuildingField::HeatElectricityDeduction), None);
    }

    #[test]
    fn bad_energy_class_and_zero_id() {
        let h = "building_id,declared_energy_class,normal_household_eui,heat_electricity_deduction\n";
        assert!(parse_buildings(format!("{h}1,H,1,1\n").as_bytes()).is_err());
        assert!(parse_buildings(format!("{h}0,A,1,1\n").as_bytes()).is_err());
    }
}
