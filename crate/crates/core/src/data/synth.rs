//! Synthetic capacity-fade generator used as a fixture when the public
//! datasets are not on disk.
//!
//! The trend is an accelerating exponential fade from nominal capacity down
//! to `floor · nominal` at the final cycle:
//!
//! ```text
//! trend(x) = 1 − (1 − floor) · (e^{r·x} − 1) / (e^{r} − 1),   x = i / (n − 1)
//! ```
//!
//! Regeneration events arrive as a Poisson process (exponential gaps with
//! rate `regen_rate` per cycle); each adds a bump of uniform magnitude that
//! decays geometrically. Gaussian measurement noise is added last.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{write_capacity_csv, CapacitySeries, CellEntry, DatasetManifest};
use super::{CALCE_NOMINAL_AH, NASA_NOMINAL_AH};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub cell_id: String,
    pub cycles: usize,
    pub nominal_ah: f64,
    /// Normalized capacity reached at the last cycle.
    pub floor: f64,
    /// Fade acceleration `r`; larger bends the curve later and harder.
    pub curvature: f64,
    /// Expected regeneration events per cycle.
    pub regen_rate: f64,
    /// Bump magnitude range, as a fraction of nominal.
    pub regen_magnitude: (f64, f64),
    /// Per-cycle retention of an active bump.
    pub regen_decay: f64,
    /// Noise standard deviation, as a fraction of nominal.
    pub noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cell_id: "syn".into(),
            cycles: 168,
            nominal_ah: NASA_NOMINAL_AH,
            floor: 0.6,
            curvature: 1.5,
            regen_rate: 0.03,
            regen_magnitude: (0.01, 0.03),
            regen_decay: 0.8,
            noise_sd: 0.003,
        }
    }
}

impl SynthConfig {
    pub fn trend(&self, i: usize) -> f64 {
        let x = i as f64 / (self.cycles - 1) as f64;
        let r = self.curvature;
        let shape = if r.abs() < 1e-12 {
            x
        } else {
            (r * x).exp_m1() / r.exp_m1()
        };
        1.0 - (1.0 - self.floor) * shape
    }

    pub fn generate(&self, seed: u64) -> Result<CapacitySeries> {
        if self.cycles < 10 {
            return Err(Error::Config(format!(
                "synthetic series needs >= 10 cycles, got {}",
                self.cycles
            )));
        }
        if !(0.0 < self.floor && self.floor < 1.0) {
            return Err(Error::Config(format!("floor {} not in (0, 1)", self.floor)));
        }
        let mut rng = seed::stream(seed, seed::SYNTH_STREAM);
        let noise = Normal::new(0.0, self.noise_sd.max(0.0))
            .map_err(|e| Error::Config(format!("noise_sd: {e}")))?;

        let mut regen = vec![0.0; self.cycles];
        if self.regen_rate > 0.0 {
            let gaps =
                Exp::new(self.regen_rate).map_err(|e| Error::Config(format!("regen_rate: {e}")))?;
            let (lo, hi) = self.regen_magnitude;
            let mut at = gaps.sample(&mut rng);
            let mut events = Vec::new();
            while (at as usize) < self.cycles {
                events.push((at as usize, rng.random_range(lo..=hi)));
                at += gaps.sample(&mut rng);
            }
            let mut bump = 0.0;
            let mut next = events.into_iter().peekable();
            for (i, slot) in regen.iter_mut().enumerate() {
                bump *= self.regen_decay;
                while let Some((_, m)) = next.next_if(|(c, _)| *c == i) {
                    bump += m;
                }
                *slot = bump;
            }
        }

        let capacities = (0..self.cycles)
            .map(|i| {
                let eps = if self.noise_sd > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                let norm = self.trend(i) + regen[i] + eps;
                self.nominal_ah * norm.max(1e-6)
            })
            .collect();
        CapacitySeries::new(self.cell_id.clone(), capacities, self.nominal_ah)
    }
}

/// Default-shaped synthetic cell.
pub fn synthesize_degradation(
    seed: u64,
    cycles: usize,
    regen_rate: f64,
    noise_sd: f64,
) -> Result<CapacitySeries> {
    SynthConfig {
        cycles,
        regen_rate,
        noise_sd,
        ..SynthConfig::default()
    }
    .generate(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthPreset {
    /// Four 2.0 Ah cells of 132–168 cycles.
    NasaLike,
    /// Four 1.1 Ah cells of roughly 900 cycles.
    CalceLike,
}

impl SynthPreset {
    pub fn cells(self) -> Vec<SynthConfig> {
        // (cycles, floor, curvature)
        let (nominal, shapes): (f64, [(usize, f64, f64); 4]) = match self {
            SynthPreset::NasaLike => (
                NASA_NOMINAL_AH,
                [
                    (168, 0.66, 1.4),
                    (168, 0.58, 1.1),
                    (168, 0.69, 1.2),
                    (132, 0.66, 1.8),
                ],
            ),
            SynthPreset::CalceLike => (
                CALCE_NOMINAL_AH,
                [
                    (880, 0.50, 1.6),
                    (930, 0.46, 1.3),
                    (900, 0.52, 1.5),
                    (950, 0.48, 1.9),
                ],
            ),
        };
        shapes
            .iter()
            .enumerate()
            .map(|(i, &(cycles, floor, curvature))| SynthConfig {
                cell_id: format!("syn{:02}", i + 1),
                cycles,
                nominal_ah: nominal,
                floor,
                curvature,
                regen_rate: 0.05,
                noise_sd: 0.004,
                ..SynthConfig::default()
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            SynthPreset::NasaLike => "synthetic-nasa",
            SynthPreset::CalceLike => "synthetic-calce",
        }
    }
}

/// Writes one CSV per preset cell plus `manifest.json` into `dir`; returns
/// the manifest path. Cell `i` uses seed `seed + i`.
pub fn write_synthetic_dataset(dir: &Path, preset: SynthPreset, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let configs = preset.cells();
    let mut entries = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let series = cfg.generate(seed.wrapping_add(i as u64))?;
        let file = PathBuf::from(format!("{}.csv", cfg.cell_id));
        write_capacity_csv(&dir.join(&file), &series)?;
        entries.push(CellEntry {
            id: cfg.cell_id.clone(),
            path: file,
        });
    }
    let manifest = DatasetManifest {
        name: preset.name().to_string(),
        nominal_ah: configs[0].nominal_ah,
        cells: entries,
    };
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}
