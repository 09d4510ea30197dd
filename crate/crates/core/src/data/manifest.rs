use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_capacity_csv, CapacitySeries};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub path: PathBuf,
}

/// `{"name", "nominal_ah", "cells": [{"id", "path"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub nominal_ah: f64,
    pub cells: Vec<CellEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub nominal_ah: f64,
    pub cells: Vec<CapacitySeries>,
}

impl Dataset {
    /// Reads a manifest and every cell CSV it lists.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let mut cells: Vec<CapacitySeries> = Vec::with_capacity(manifest.cells.len());
        for entry in &manifest.cells {
            if cells.iter().any(|c| c.cell_id == entry.id) {
                return Err(Error::Data(format!("duplicate cell id '{}'", entry.id)));
            }
            let path = base.join(&entry.path);
            cells.push(load_capacity_csv(&path, &entry.id, manifest.nominal_ah)?);
        }
        if cells.is_empty() {
            return Err(Error::Data(format!(
                "{}: manifest lists no cells",
                manifest_path.display()
            )));
        }
        Ok(Dataset {
            name: manifest.name,
            nominal_ah: manifest.nominal_ah,
            cells,
        })
    }

    pub fn cell_ids(&self) -> Vec<String> {
        self.cells.iter().map(|c| c.cell_id.clone()).collect()
    }

    pub fn cell(&self, id: &str) -> Result<&CapacitySeries> {
        self.cells
            .iter()
            .find(|c| c.cell_id == id)
            .ok_or_else(|| Error::Lookup {
                id: id.to_string(),
                available: self.cell_ids(),
            })
    }
}
