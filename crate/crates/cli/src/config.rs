//! Run configuration: a TOML file whose keys mirror [`RunConfig`], with
//! command-line overrides applied on top.

use std::path::{Path, PathBuf};

use mdfa_core::eval::EvalMode;
use mdfa_core::train::TrainConfig;
use mdfa_core::{Error, ModelConfig, ModelVariant, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest (JSON).
    pub dataset: Option<PathBuf>,
    /// Held-out cell; every cell of the dataset in turn when absent.
    pub cell: Option<String>,
    pub variant: ModelVariant,
    pub mode: EvalMode,
    pub out: PathBuf,
    /// Seeds `seed..seed + runs` are trained per cell and variant.
    pub runs: usize,
    pub seed: u64,
    /// Worker threads for independent seeds.
    pub jobs: usize,
    /// Window sizes for `sweep`.
    pub windows: Vec<usize>,
    /// Suppress per-epoch progress lines on stderr.
    pub quiet: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            cell: None,
            variant: ModelVariant::Full,
            mode: EvalMode::TeacherForced,
            out: PathBuf::from("runs"),
            runs: 10,
            seed: 0,
            jobs: 1,
            windows: vec![4, 8, 16, 24, 32],
            quiet: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Flag values that win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub cell: Option<String>,
    pub variant: Option<ModelVariant>,
    pub window: Option<usize>,
    pub seed: Option<u64>,
    pub runs: Option<usize>,
    pub mode: Option<EvalMode>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.dataset {
            self.dataset = Some(v.clone());
        }
        if let Some(v) = &o.cell {
            self.cell = Some(v.clone());
        }
        if let Some(v) = o.variant {
            self.variant = v;
        }
        if let Some(v) = o.window {
            self.model.window = v;
            self.windows = vec![v];
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.runs {
            self.runs = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.jobs {
            self.jobs = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be >= 1".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be >= 1".into()));
        }
        if self.windows.is_empty() {
            return Err(Error::Config("windows must not be empty".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Manifest path, checked to exist.
    pub fn dataset_path(&self) -> Result<&Path> {
        let path = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given (--dataset or `dataset` key)".into()))?;
        if !path.is_file() {
            return Err(Error::Config(format!(
                "dataset manifest {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|i| self.seed + i).collect()
    }
}
