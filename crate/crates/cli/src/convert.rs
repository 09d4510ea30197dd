//! Raw tabular exports to the canonical `cycle,capacity_ah` CSV.

use mdfa_core::data::CapacitySeries;
use mdfa_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvertSpec {
    pub cell_id: String,
    pub nominal_ah: f64,
    pub capacity_col: String,
    /// Orders and deduplicates rows; file order when absent.
    pub cycle_col: Option<String>,
    /// Keep only rows whose column equals the value, e.g. `type=discharge`.
    pub filter: Option<(String, String)>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| {
            Error::Format(format!(
                "no column '{name}' (columns: {})",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
}

/// Rows with an empty capacity field are skipped.
pub fn convert_csv(text: &str, spec: &ConvertSpec) -> Result<CapacitySeries> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    let cap_idx = column(&headers, &spec.capacity_col)?;
    let cycle_idx = spec
        .cycle_col
        .as_deref()
        .map(|c| column(&headers, c))
        .transpose()?;
    let filter = match &spec.filter {
        Some((col, value)) => Some((column(&headers, col)?, value.as_str())),
        None => None,
    };

    let mut by_cycle: Vec<(f64, f64, String)> = Vec::new();
    let mut in_order = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        if let Some((idx, value)) = filter {
            if record.get(idx) != Some(value) {
                continue;
            }
        }
        let raw = record.get(cap_idx).unwrap_or("");
        if raw.is_empty() {
            continue;
        }
        let cap: f64 = raw
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: capacity '{raw}' is not a number")))?;
        match cycle_idx {
            Some(ci) => {
                let raw_cycle = record.get(ci).unwrap_or("");
                let cycle: f64 = raw_cycle.parse().map_err(|_| {
                    Error::Data(format!("line {line}: cycle '{raw_cycle}' is not a number"))
                })?;
                by_cycle.push((cycle, cap, raw_cycle.to_string()));
            }
            None => in_order.push(cap),
        }
    }
    let capacities = if cycle_idx.is_some() {
        by_cycle.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = by_cycle.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!("duplicate cycle {}", w[1].2)));
        }
        by_cycle.into_iter().map(|(_, c, _)| c).collect()
    } else {
        in_order
    };
    if capacities.is_empty() {
        return Err(Error::Data(format!(
            "{}: no capacity rows selected",
            spec.cell_id
        )));
    }
    CapacitySeries::new(spec.cell_id.clone(), capacities, spec.nominal_ah)
}

/// Parses `col=value`.
pub fn parse_filter(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(c, v)| (c.trim().to_string(), v.trim().to_string()))
        .filter(|(c, _)| !c.is_empty())
        .ok_or_else(|| Error::Config(format!("filter '{s}' is not of the form column=value")))
}
