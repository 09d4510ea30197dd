//! Adam optimization with a per-cell tail holdout for early stopping.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::DropoutCtx;
use crate::seed::seed_everything;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// Fraction of each training cell's latest pairs held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            max_epochs: 1000,
            patience: 50,
            batch_size: 32,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0 (got {})", self.lr)));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 0.5) {
            return Err(Error::Config(format!(
                "0 < val_fraction < 0.5 violated ({})",
                self.val_fraction
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "max_epochs and batch_size must be >= 1".into(),
            ));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::Config(format!("betas ({b1}, {b2}) not in [0, 1)")));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.betas.0,
            beta2: self.betas.1,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .unzip();
        AdamState { m, v, t: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "adam_step",
            &[params.len(), state.m.len()],
            &[grads.len()],
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.into_iter().enumerate() {
        let g = grads[i];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if g.len() != p.len() || m.len() != p.len() {
            return Err(Error::dim("adam_step", p.shape(), &[g.len()]));
        }
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub train_seconds: f64,
}

impl TrainTrace {
    /// JSON lines, one `{"epoch","train_mse","val_mse"}` per epoch, plus
    /// `"seconds"` when `with_timing` is set.
    pub fn to_jsonl(&self, with_timing: bool) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).expect("plain struct");
            if !with_timing {
                v.as_object_mut()
                    .expect("struct is an object")
                    .remove("seconds");
            }
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

/// Splits pooled pairs into (train, validation). For every cell, the
/// `round(fraction · n)` pairs with the latest end cycles go to validation,
/// at least one when the cell has two or more pairs.
pub fn split_validation(
    data: &WindowedDataset,
    fraction: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    let mut by_cell: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, p) in data.provenance.iter().enumerate() {
        by_cell.entry(p.cell_id.as_str()).or_default().push(i);
    }
    let (mut train_idx, mut val_idx) = (Vec::new(), Vec::new());
    let mut order: Vec<&str> = Vec::new();
    for p in &data.provenance {
        if !order.contains(&p.cell_id.as_str()) {
            order.push(p.cell_id.as_str());
        }
    }
    for cell in order {
        let mut idx = by_cell.remove(cell).unwrap_or_default();
        idx.sort_by_key(|&i| data.provenance[i].end_cycle);
        let n = idx.len();
        let n_val = if n >= 2 {
            ((fraction * n as f64).round() as usize).clamp(1, n - 1)
        } else {
            0
        };
        val_idx.extend_from_slice(&idx[n - n_val..]);
        train_idx.extend_from_slice(&idx[..n - n_val]);
    }
    Ok((data.select(&train_idx), data.select(&val_idx)))
}

/// Eval-mode mean squared error of `model` over `data`.
pub fn mse_on(model: &Model, data: &WindowedDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput { op: "mse_on" });
    }
    let preds = model.predict_batch(&data.inputs)?;
    let sse: f64 = preds
        .iter()
        .zip(&data.targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sse / data.len() as f64)
}

pub fn train(
    model: Model,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainTrace)> {
    train_with(model, data, cfg, |_| {})
}

/// Trains with shuffled mini-batches, evaluates validation MSE after each
/// epoch and returns the parameters of the best validation epoch. Stops once
/// `patience` epochs pass without improvement, or at `max_epochs`.
pub fn train_with(
    mut model: Model,
    data: &WindowedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, TrainTrace)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training dataset is empty".into()));
    }
    if data.window != model.window() {
        return Err(Error::dim("train", &[model.window()], &[data.window]));
    }
    let (train_set, val_set) = split_validation(data, cfg.val_fraction)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Usage(format!(
            "validation split of {} pairs leaves {} training and {} validation pairs",
            data.len(),
            train_set.len(),
            val_set.len()
        )));
    }

    let mut streams = seed_everything(cfg.seed);
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params().iter().map(|(_, t)| t));
    let p = model.config().dropout_p;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.params().clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epochs = Vec::new();
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut streams.shuffle);
        let mut sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let mut dropout = DropoutCtx::training(p, &mut streams.dropout);
            let mut preds = Vec::with_capacity(batch.len());
            for &i in batch {
                preds.push(model.forward(&mut tape, &bound, &train_set.inputs[i], &mut dropout)?);
            }
            let pred = tape.concat(&preds, 0)?;
            let targets = batch.iter().map(|&i| train_set.targets[i]).collect();
            let target = tape.constant(Tensor::vector(targets));
            let loss = tape.mse_loss(pred, target)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            sse += value * batch.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<&[f64]> = bound
                .vars()
                .iter()
                .map(|&v| tape.grad(v).expect("bound params track gradients"))
                .collect();
            adam_step(model.params_mut().tensors_mut(), &grads, &mut state, &adam)?;
        }
        let val_mse = mse_on(&model, &val_set)?;
        if !val_mse.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let record = EpochRecord {
            epoch,
            train_mse: sse / train_set.len() as f64,
            val_mse,
            seconds: t0.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        epochs.push(record);
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best.copy_values_from(model.params())?;
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    model.params_mut().copy_values_from(&best)?;
    let stopped_epoch = epochs.len();
    Ok((
        model,
        TrainTrace {
            epochs,
            stopped_epoch,
            best_epoch,
            best_val_mse: best_val,
            train_seconds: started.elapsed().as_secs_f64(),
        },
    ))
}
