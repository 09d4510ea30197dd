use serde::{Deserialize, Serialize};

use super::{make_windows, CapacitySeries, WindowedDataset};
use crate::error::{Error, Result};

/// Leave-one-out split: one held-out cell, the rest for training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_cell: String,
    pub train_cells: Vec<String>,
}

pub fn leave_one_out(cells: &[CapacitySeries], test_id: &str) -> Result<SplitSpec> {
    if !cells.iter().any(|c| c.cell_id == test_id) {
        return Err(Error::Lookup {
            id: test_id.to_string(),
            available: cells.iter().map(|c| c.cell_id.clone()).collect(),
        });
    }
    let train_cells: Vec<String> = cells
        .iter()
        .filter(|c| c.cell_id != test_id)
        .map(|c| c.cell_id.clone())
        .collect();
    if train_cells.is_empty() {
        return Err(Error::Usage(format!(
            "holding out '{test_id}' leaves no training cells"
        )));
    }
    Ok(SplitSpec {
        test_cell: test_id.to_string(),
        train_cells,
    })
}

/// Windows from every training cell of `split`, pooled in cell order.
pub fn training_pairs(
    cells: &[CapacitySeries],
    split: &SplitSpec,
    window: usize,
) -> Result<WindowedDataset> {
    let mut pooled = WindowedDataset::empty(window);
    for id in &split.train_cells {
        let cell = cells
            .iter()
            .find(|c| &c.cell_id == id)
            .ok_or_else(|| Error::Lookup {
                id: id.clone(),
                available: cells.iter().map(|c| c.cell_id.clone()).collect(),
            })?;
        pooled.extend(make_windows(&cell.normalize(), window)?)?;
    }
    Ok(pooled)
}
