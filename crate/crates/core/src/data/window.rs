use serde::{Deserialize, Serialize};

use super::NormalizedSeries;
use crate::error::{Error, Result};

/// Origin of a training pair: the cell and the cycle number (1-based) of
/// the last window element. The target is cycle `end_cycle + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub cell_id: String,
    pub end_cycle: usize,
}

/// Stride-1 sliding windows with next-cycle targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub window: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub provenance: Vec<Provenance>,
}

impl WindowedDataset {
    pub fn empty(window: usize) -> Self {
        WindowedDataset {
            window,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn push(&mut self, input: Vec<f64>, target: f64, provenance: Provenance) {
        debug_assert_eq!(input.len(), self.window);
        self.inputs.push(input);
        self.targets.push(target);
        self.provenance.push(provenance);
    }

    pub fn extend(&mut self, other: WindowedDataset) -> Result<()> {
        if other.window != self.window {
            return Err(Error::dim("extend", &[self.window], &[other.window]));
        }
        self.inputs.extend(other.inputs);
        self.targets.extend(other.targets);
        self.provenance.extend(other.provenance);
        Ok(())
    }

    /// Subset by indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> WindowedDataset {
        let mut out = WindowedDataset::empty(self.window);
        for &i in indices {
            out.push(
                self.inputs[i].clone(),
                self.targets[i],
                self.provenance[i].clone(),
            );
        }
        out
    }
}

pub fn make_windows(series: &NormalizedSeries, window: usize) -> Result<WindowedDataset> {
    if window == 0 {
        return Err(Error::Config("window must be >= 1".into()));
    }
    let n = series.len();
    if n <= window {
        return Err(Error::Data(format!(
            "{}: series has {n} cycles, windowing with T_w={window} needs at least {}",
            series.cell_id,
            window + 1
        )));
    }
    let mut out = WindowedDataset::empty(window);
    for start in 0..n - window {
        out.push(
            series.values[start..start + window].to_vec(),
            series.values[start + window],
            Provenance {
                cell_id: series.cell_id.clone(),
                end_cycle: start + window,
            },
        );
    }
    Ok(out)
}
