//! Canonical capacity CSV: header `cycle,capacity_ah`, one record per line,
//! LF endings.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::CapacitySeries;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "cycle,capacity_ah";

/// Parses canonical CSV text. Records are ordered by cycle; gaps in the
/// cycle numbering are closed so the result is indexed 1..n.
pub fn parse_capacity_csv(text: &str, cell_id: &str, nominal_ah: f64) -> Result<CapacitySeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::Data(format!("{cell_id}: empty capacity file"))),
        Some(r) => r.map_err(|e| Error::Format(format!("{cell_id}: {e}")))?,
    };
    if header.iter().collect::<Vec<_>>() != ["cycle", "capacity_ah"] {
        return Err(Error::Format(format!(
            "{cell_id}: missing header `{CSV_HEADER}`"
        )));
    }
    let mut by_cycle = BTreeMap::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Format(format!("{cell_id}: row {row}: {e}")))?;
        if rec.len() != 2 {
            return Err(Error::Format(format!(
                "{cell_id}: row {row}: expected 2 fields, found {}",
                rec.len()
            )));
        }
        let cycle: u64 = rec[0].parse().ok().filter(|&c| c > 0).ok_or_else(|| {
            Error::Data(format!(
                "{cell_id}: row {row}: bad cycle index '{}'",
                &rec[0]
            ))
        })?;
        let cap: f64 = rec[1].parse().map_err(|_| {
            Error::Data(format!("{cell_id}: row {row}: bad capacity '{}'", &rec[1]))
        })?;
        if !(cap > 0.0 && cap.is_finite()) {
            return Err(Error::Data(format!(
                "{cell_id}: row {row}: non-positive capacity {cap}"
            )));
        }
        if by_cycle.insert(cycle, cap).is_some() {
            return Err(Error::Data(format!(
                "{cell_id}: row {row}: duplicate cycle {cycle}"
            )));
        }
    }
    if by_cycle.is_empty() {
        return Err(Error::Data(format!("{cell_id}: no capacity records")));
    }
    CapacitySeries::new(cell_id, by_cycle.into_values().collect(), nominal_ah)
}

pub fn load_capacity_csv(path: &Path, cell_id: &str, nominal_ah: f64) -> Result<CapacitySeries> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_capacity_csv(&text, cell_id, nominal_ah)
}

pub fn write_capacity_csv(path: &Path, series: &CapacitySeries) -> Result<()> {
    let mut out = Vec::with_capacity(16 * (series.len() + 1));
    writeln!(out, "{CSV_HEADER}").expect("vec write");
    for (i, c) in series.capacities.iter().enumerate() {
        writeln!(out, "{},{:?}", i + 1, c).expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
