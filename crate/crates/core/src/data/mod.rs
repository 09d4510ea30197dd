//! Per-cycle capacity data: ingestion, normalization, windowing and splits.

mod csv_io;
mod manifest;
mod split;
mod synth;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{load_capacity_csv, parse_capacity_csv, write_capacity_csv, CSV_HEADER};
pub use manifest::{CellEntry, Dataset, DatasetManifest};
pub use split::{leave_one_out, training_pairs, SplitSpec};
pub use synth::{synthesize_degradation, write_synthetic_dataset, SynthConfig, SynthPreset};
pub use window::{make_windows, Provenance, WindowedDataset};

/// End of life as a fraction of nominal capacity.
pub const EOL_FRACTION: f64 = 0.70;
pub const NASA_NOMINAL_AH: f64 = 2.0;
pub const CALCE_NOMINAL_AH: f64 = 1.1;

/// One cell's capacity per cycle (index 0 is cycle 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySeries {
    pub cell_id: String,
    pub capacities: Vec<f64>,
    pub nominal_ah: f64,
    pub eol_ah: f64,
}

impl CapacitySeries {
    pub fn new(cell_id: impl Into<String>, capacities: Vec<f64>, nominal_ah: f64) -> Result<Self> {
        let cell_id = cell_id.into();
        if !(nominal_ah > 0.0 && nominal_ah.is_finite()) {
            return Err(Error::Data(format!(
                "{cell_id}: nominal capacity {nominal_ah} must be positive"
            )));
        }
        if capacities.is_empty() {
            return Err(Error::Data(format!("{cell_id}: empty capacity series")));
        }
        if let Some(i) = capacities.iter().position(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Data(format!(
                "{cell_id}: cycle {} has non-positive capacity {}",
                i + 1,
                capacities[i]
            )));
        }
        Ok(CapacitySeries {
            cell_id,
            capacities,
            nominal_ah,
            eol_ah: EOL_FRACTION * nominal_ah,
        })
    }

    pub fn len(&self) -> usize {
        self.capacities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.capacities.is_empty()
    }

    pub fn normalize(&self) -> NormalizedSeries {
        normalize(self)
    }
}

/// Capacities divided by nominal capacity; the EOL threshold is 0.70.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub cell_id: String,
    pub values: Vec<f64>,
    pub nominal_ah: f64,
}

impl NormalizedSeries {
    pub fn eol(&self) -> f64 {
        EOL_FRACTION
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn denormalize(&self) -> CapacitySeries {
        CapacitySeries {
            cell_id: self.cell_id.clone(),
            capacities: self.values.iter().map(|v| v * self.nominal_ah).collect(),
            nominal_ah: self.nominal_ah,
            eol_ah: EOL_FRACTION * self.nominal_ah,
        }
    }
}

pub fn normalize(s: &CapacitySeries) -> NormalizedSeries {
    NormalizedSeries {
        cell_id: s.cell_id.clone(),
        values: s.capacities.iter().map(|c| c / s.nominal_ah).collect(),
        nominal_ah: s.nominal_ah,
    }
}
