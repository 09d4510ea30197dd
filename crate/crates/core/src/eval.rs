//! Metrics, curve prediction, RUL extraction and run aggregation.
//!
//! All quantities are on the normalized-capacity scale. The metric region of
//! a test cell is cycles `T_w+1..=n`, predicted teacher-forced.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_windows, NormalizedSeries, EOL_FRACTION};
use crate::error::{Error, Result};
use crate::model::Model;

fn check_pair(op: &'static str, pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::dim(op, &[pred.len()], &[truth.len()]));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput { op });
    }
    Ok(())
}

/// Coefficient of determination.
pub fn r2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("r2", pred, truth)?;
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric(
            "r2 of a zero-variance target".into(),
        ));
    }
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("mae", pred, truth)?;
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).abs()).sum();
    Ok(s / truth.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("rmse", pred, truth)?;
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok((s / truth.len() as f64).sqrt())
}

/// Mean of `pred − truth`; negative means the model under-estimates.
pub fn mean_signed_error(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair("mean_signed_error", pred, truth)?;
    let s: f64 = truth.iter().zip(pred).map(|(t, p)| p - t).sum();
    Ok(s / truth.len() as f64)
}

/// Anything that maps fixed-length windows to next-step values in
/// inference mode.
pub trait Forecaster {
    fn window(&self) -> usize;
    fn forecast(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>>;
}

impl Forecaster for Model {
    fn window(&self) -> usize {
        Model::window(self)
    }

    fn forecast(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.predict_batch(windows)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    TeacherForced,
    Recursive,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::TeacherForced => "teacher_forced",
            EvalMode::Recursive => "recursive",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher_forced" => Ok(EvalMode::TeacherForced),
            "recursive" => Ok(EvalMode::Recursive),
            _ => Err(Error::Lookup {
                id: s.to_string(),
                available: vec!["teacher_forced".into(), "recursive".into()],
            }),
        }
    }
}

/// Predictions for cycles `T_w+1..=n` of `series`.
pub fn predict_curve<F: Forecaster + ?Sized>(
    model: &F,
    series: &NormalizedSeries,
    mode: EvalMode,
) -> Result<Vec<f64>> {
    let w = model.window();
    match mode {
        EvalMode::TeacherForced => {
            let pairs = make_windows(series, w)?;
            model.forecast(&pairs.inputs)
        }
        EvalMode::Recursive => {
            let n = series.len();
            if n <= w {
                // Reuse the windowing diagnostic.
                make_windows(series, w)?;
            }
            let mut history = series.values[..w].to_vec();
            let mut out = Vec::with_capacity(n - w);
            for _ in 0..n - w {
                let next = model.forecast(&[history[history.len() - w..].to_vec()])?[0];
                history.push(next);
                out.push(next);
            }
            Ok(out)
        }
    }
}

/// Cycle number of the first curve value at or below `eol`, where
/// `curve[0]` sits at `start_cycle`. No smoothing; later recoveries above
/// the threshold are ignored.
pub fn rul_at_eol(curve: &[f64], start_cycle: usize, eol: f64) -> Option<usize> {
    curve
        .iter()
        .position(|&v| v <= eol)
        .map(|i| start_cycle + i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Curve used for the predicted RUL and the plot file.
    pub mode: EvalMode,
    /// Repetitions of the timed loop; the median is reported.
    pub timing_reps: usize,
    pub eol: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            mode: EvalMode::TeacherForced,
            timing_reps: 3,
            eol: EOL_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cell_id: String,
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mean_signed_error: f64,
    /// Cycle number of `predicted_curve[0]`.
    pub start_cycle: usize,
    pub mode: EvalMode,
    /// Teacher-forced predictions.
    pub predicted_curve: Vec<f64>,
    pub true_curve: Vec<f64>,
    pub recursive_curve: Vec<f64>,
    /// Cycles from the forecast origin (`start_cycle − 1`) to the first
    /// EOL crossing of the `mode` curve; `None` when it never crosses.
    pub rul_pred: Option<usize>,
    pub rul_true: Option<usize>,
    /// Wall-clock timing; `None` in stored reports so they stay
    /// reproducible byte for byte.
    pub test_seconds: Option<f64>,
    pub ms_per_step: Option<f64>,
    pub seeds_used: Vec<u64>,
    pub aggregation: String,
}

impl EvalReport {
    pub fn without_timing(&self) -> EvalReport {
        EvalReport {
            test_seconds: None,
            ms_per_step: None,
            ..self.clone()
        }
    }

    pub fn steps(&self) -> usize {
        self.predicted_curve.len()
    }

    pub fn curve(&self, mode: EvalMode) -> &[f64] {
        match mode {
            EvalMode::TeacherForced => &self.predicted_curve,
            EvalMode::Recursive => &self.recursive_curve,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Evaluates `model` on a held-out cell. `seed` is recorded in the report.
pub fn evaluate<F: Forecaster + ?Sized>(
    model: &F,
    test: &NormalizedSeries,
    seed: u64,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let w = model.window();
    let mut predicted = Vec::new();
    let mut times = Vec::with_capacity(cfg.timing_reps.max(1));
    for _ in 0..cfg.timing_reps.max(1) {
        let t0 = Instant::now();
        predicted = predict_curve(model, test, EvalMode::TeacherForced)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    let test_seconds = median(times);
    let recursive = predict_curve(model, test, EvalMode::Recursive)?;
    let truth = test.values[w..].to_vec();

    let start_cycle = w + 1;
    let origin = w;
    let mode_curve = match cfg.mode {
        EvalMode::TeacherForced => &predicted,
        EvalMode::Recursive => &recursive,
    };
    Ok(EvalReport {
        cell_id: test.cell_id.clone(),
        r2: r2(&predicted, &truth)?,
        mae: mae(&predicted, &truth)?,
        rmse: rmse(&predicted, &truth)?,
        mean_signed_error: mean_signed_error(&predicted, &truth)?,
        start_cycle,
        mode: cfg.mode,
        rul_pred: rul_at_eol(mode_curve, start_cycle, cfg.eol).map(|c| c - origin),
        rul_true: rul_at_eol(&truth, start_cycle, cfg.eol).map(|c| c - origin),
        ms_per_step: Some(test_seconds * 1000.0 / predicted.len() as f64),
        test_seconds: Some(test_seconds),
        predicted_curve: predicted,
        true_curve: truth,
        recursive_curve: recursive,
        seeds_used: vec![seed],
        aggregation: "single".into(),
    })
}

fn mean_of(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Averages metrics over runs on the same cell. Curves and RULs come from
/// the run with the median RMSE (lower median for even counts).
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or(Error::EmptyInput {
        op: "aggregate_runs",
    })?;
    if let Some(other) = reports.iter().find(|r| r.cell_id != first.cell_id) {
        return Err(Error::Usage(format!(
            "cannot aggregate reports from different cells ('{}' and '{}')",
            first.cell_id, other.cell_id
        )));
    }
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| reports[a].rmse.total_cmp(&reports[b].rmse).then(a.cmp(&b)));
    let rep = &reports[order[(reports.len() - 1) / 2]];

    let timing = |f: fn(&EvalReport) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = reports.iter().map(f).collect();
        v.map(|v| mean_of(v.into_iter()))
    };
    Ok(EvalReport {
        r2: mean_of(reports.iter().map(|r| r.r2)),
        mae: mean_of(reports.iter().map(|r| r.mae)),
        rmse: mean_of(reports.iter().map(|r| r.rmse)),
        mean_signed_error: mean_of(reports.iter().map(|r| r.mean_signed_error)),
        test_seconds: timing(|r| r.test_seconds),
        ms_per_step: timing(|r| r.ms_per_step),
        seeds_used: reports
            .iter()
            .flat_map(|r| r.seeds_used.iter().copied())
            .collect(),
        aggregation: format!("mean of {} runs", reports.len()),
        ..rep.clone()
    })
}

pub const CURVE_HEADER: &str = "cycle,true_norm,pred_norm";

pub fn curve_csv(report: &EvalReport, mode: EvalMode) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (i, (t, p)) in report.true_curve.iter().zip(report.curve(mode)).enumerate() {
        out.push_str(&format!("{},{t:?},{p:?}\n", report.start_cycle + i));
    }
    out
}

pub fn write_curve_csv(path: &Path, report: &EvalReport, mode: EvalMode) -> Result<()> {
    std::fs::write(path, curve_csv(report, mode)).map_err(|e| Error::io(path, e))
}
