//! Helpers shared by the integration suites and the acceptance target.
#![allow(dead_code)]

pub mod equiv;
pub mod fd;
pub mod oracle;
pub mod probe;

use mdfa_core::data::CapacitySeries;
use mdfa_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-scale, scale)`.
pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Entries with magnitude in `[0.1, 1)` and random sign, so kinks at zero
/// stay far outside a finite-difference step.
pub fn rand_away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Linear fade from 1.0 with a small deterministic wiggle.
pub fn toy_cell(id: &str, n: usize, slope: f64) -> CapacitySeries {
    let caps = (0..n)
        .map(|i| 2.0 * (1.0 - slope * i as f64 + 0.003 * ((i as f64) * 0.7).sin()))
        .collect();
    CapacitySeries::new(id, caps, 2.0).unwrap()
}
