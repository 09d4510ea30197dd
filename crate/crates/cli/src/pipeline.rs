//! Train/evaluate orchestration shared by the `train`, `ablate` and `sweep`
//! commands.
//!
//! Layout under the output root:
//!
//! ```text
//! {cell}/{variant}/{seed}/checkpoint.json
//!                        /trace.jsonl      (losses only)
//!                        /report.json      (no timing fields)
//!                        /curve.csv
//!                        /run_meta.json    (wall-clock data)
//! {cell}/{variant}/aggregate.json
//! {cell}/{variant}/run_meta.json
//! ```

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use mdfa_core::data::{leave_one_out, training_pairs, Dataset, WindowedDataset};
use mdfa_core::eval::{aggregate_runs, evaluate, write_curve_csv, EvalConfig, EvalReport};
use mdfa_core::train::{train_with, TrainTrace};
use mdfa_core::{Error, Model, ModelVariant, Result};
use serde::Serialize;

use crate::config::RunConfig;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub train_seconds: f64,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub test_seconds: Option<f64>,
    pub ms_per_step: Option<f64>,
    pub epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub report: EvalReport,
    pub trace: TrainTrace,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub cell: String,
    pub variant: ModelVariant,
    pub window: usize,
    pub runs: Vec<RunOutcome>,
    /// Averaged report, timing included.
    pub aggregate: EvalReport,
}

/// Cells to hold out: the configured one (checked) or all of them.
pub fn target_cells(cfg: &RunConfig, dataset: &Dataset) -> Result<Vec<String>> {
    match &cfg.cell {
        Some(id) => {
            dataset.cell(id)?;
            Ok(vec![id.clone()])
        }
        None => Ok(dataset.cell_ids()),
    }
}

struct Job<'a> {
    cfg: &'a RunConfig,
    dataset: &'a Dataset,
    cell: &'a str,
    variant: ModelVariant,
    window: usize,
    pairs: WindowedDataset,
    dir: PathBuf,
}

impl Job<'_> {
    fn run(&self, seed: u64) -> Result<RunOutcome> {
        let started = unix_now();
        let mut model_cfg = self.cfg.model.clone();
        model_cfg.window = self.window;
        model_cfg.seed = seed;
        let mut train_cfg = self.cfg.train.clone();
        train_cfg.seed = seed;

        let model = Model::build(&model_cfg, self.variant)?;
        let tag = format!("{}/{}/{}", self.cell, self.variant, seed);
        let t0 = Instant::now();
        let quiet = self.cfg.quiet;
        let (model, trace) = train_with(model, &self.pairs, &train_cfg, |e| {
            if !quiet {
                eprintln!(
                    "[{tag}] epoch {:>4}  train_mse {:.6e}  val_mse {:.6e}",
                    e.epoch, e.train_mse, e.val_mse
                );
            }
        })?;
        let train_seconds = t0.elapsed().as_secs_f64();

        let test = self.dataset.cell(self.cell)?.normalize();
        let eval_cfg = EvalConfig {
            mode: self.cfg.mode,
            ..EvalConfig::default()
        };
        let report = evaluate(&model, &test, seed, &eval_cfg)?;

        let dir = self.dir.join(seed.to_string());
        create_dir(&dir)?;
        model.save(&dir.join("checkpoint.json"))?;
        let trace_path = dir.join("trace.jsonl");
        std::fs::write(&trace_path, trace.to_jsonl(false))
            .map_err(|e| Error::io(&trace_path, e))?;
        write_json(&dir.join("report.json"), &report.without_timing())?;
        write_curve_csv(&dir.join("curve.csv"), &report, self.cfg.mode)?;
        write_json(
            &dir.join("run_meta.json"),
            &RunMeta {
                seed,
                started_unix: started,
                finished_unix: unix_now(),
                train_seconds,
                stopped_epoch: trace.stopped_epoch,
                best_epoch: trace.best_epoch,
                test_seconds: report.test_seconds,
                ms_per_step: report.ms_per_step,
                epoch_seconds: trace.epochs.iter().map(|e| e.seconds).collect(),
            },
        )?;
        Ok(RunOutcome {
            seed,
            report,
            trace,
        })
    }
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order
/// and the first error (in input order) wins.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Trains and evaluates every configured seed for one held-out cell and
/// variant, writing artifacts under `dir`.
pub fn run_cell(
    cfg: &RunConfig,
    dataset: &Dataset,
    cell: &str,
    variant: ModelVariant,
    window: usize,
    dir: &Path,
) -> Result<CellOutcome> {
    let split = leave_one_out(&dataset.cells, cell)?;
    let job = Job {
        cfg,
        dataset,
        cell,
        variant,
        window,
        pairs: training_pairs(&dataset.cells, &split, window)?,
        dir: dir.to_path_buf(),
    };
    create_dir(dir)?;
    let runs = parallel_map(&cfg.seeds(), cfg.jobs, |&seed| job.run(seed))?;
    let reports: Vec<EvalReport> = runs.iter().map(|r| r.report.clone()).collect();
    let aggregate = aggregate_runs(&reports)?;
    write_json(&dir.join("aggregate.json"), &aggregate.without_timing())?;
    write_json(
        &dir.join("run_meta.json"),
        &serde_json::json!({
            "finished_unix": unix_now(),
            "test_seconds": aggregate.test_seconds,
            "ms_per_step": aggregate.ms_per_step,
        }),
    )?;
    Ok(CellOutcome {
        cell: cell.to_string(),
        variant,
        window,
        runs,
        aggregate,
    })
}

/// `cmd_train`: every target cell with the configured variant.
pub fn train(cfg: &RunConfig, dataset: &Dataset) -> Result<Vec<CellOutcome>> {
    target_cells(cfg, dataset)?
        .iter()
        .map(|cell| {
            let dir = cfg.out.join(cell).join(cfg.variant.as_str());
            run_cell(cfg, dataset, cell, cfg.variant, cfg.model.window, &dir)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub key: String,
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
}

impl MetricRow {
    fn from_report(key: String, r: &EvalReport) -> Self {
        MetricRow {
            key,
            r2: r.r2,
            mae: r.mae,
            rmse: r.rmse,
        }
    }
}

pub fn metric_csv(header_key: &str, rows: &[MetricRow]) -> String {
    let mut out = format!("{header_key},r2,mae,rmse\n");
    for r in rows {
        out.push_str(&format!("{},{:?},{:?},{:?}\n", r.key, r.r2, r.mae, r.rmse));
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mean_rows(per_cell: &[Vec<MetricRow>]) -> Vec<MetricRow> {
    let n = per_cell.len() as f64;
    (0..per_cell[0].len())
        .map(|i| MetricRow {
            key: per_cell[0][i].key.clone(),
            r2: per_cell.iter().map(|rows| rows[i].r2).sum::<f64>() / n,
            mae: per_cell.iter().map(|rows| rows[i].mae).sum::<f64>() / n,
            rmse: per_cell.iter().map(|rows| rows[i].rmse).sum::<f64>() / n,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TableOutcome {
    pub per_cell: Vec<(String, Vec<MetricRow>)>,
    /// Mean over cells.
    pub summary: Vec<MetricRow>,
}

/// `cmd_ablate`: all six variants in table order with shared seeds. Writes
/// `{cell}/ablation.csv` and a cell-averaged `ablation.csv` at the root.
pub fn ablate(cfg: &RunConfig, dataset: &Dataset) -> Result<TableOutcome> {
    let mut per_cell = Vec::new();
    for cell in target_cells(cfg, dataset)? {
        let mut rows = Vec::new();
        for variant in ModelVariant::TABLE_ORDER {
            let dir = cfg.out.join(&cell).join(variant.as_str());
            let outcome = run_cell(cfg, dataset, &cell, variant, cfg.model.window, &dir)?;
            rows.push(MetricRow::from_report(
                variant.to_string(),
                &outcome.aggregate,
            ));
        }
        write_text(
            &cfg.out.join(&cell).join("ablation.csv"),
            &metric_csv("variant", &rows),
        )?;
        per_cell.push((cell, rows));
    }
    let summary = mean_rows(&per_cell.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    write_text(
        &cfg.out.join("ablation.csv"),
        &metric_csv("variant", &summary),
    )?;
    Ok(TableOutcome { per_cell, summary })
}

/// Rejects window sizes that leave some cell without a single pair.
pub fn check_windows(dataset: &Dataset, windows: &[usize]) -> Result<()> {
    for &w in windows {
        if w == 0 {
            return Err(Error::Config("window sizes must be >= 1".into()));
        }
        if let Some(c) = dataset.cells.iter().find(|c| c.len() <= w) {
            return Err(Error::Config(format!(
                "window {w} is too large for cell '{}' ({} cycles)",
                c.cell_id,
                c.len()
            )));
        }
    }
    Ok(())
}

/// `cmd_sweep`: retrains the configured variant per window size. Writes
/// `{cell}/sweep.csv` (rows ordered by window) and a cell-averaged
/// `sweep.csv` at the root.
pub fn sweep(cfg: &RunConfig, dataset: &Dataset) -> Result<TableOutcome> {
    let mut windows = cfg.windows.clone();
    windows.sort_unstable();
    windows.dedup();
    check_windows(dataset, &windows)?;
    let mut per_cell = Vec::new();
    for cell in target_cells(cfg, dataset)? {
        let mut rows = Vec::new();
        for &w in &windows {
            let dir = cfg
                .out
                .join(&cell)
                .join(format!("tw{w}"))
                .join(cfg.variant.as_str());
            let outcome = run_cell(cfg, dataset, &cell, cfg.variant, w, &dir)?;
            rows.push(MetricRow::from_report(w.to_string(), &outcome.aggregate));
        }
        write_text(
            &cfg.out.join(&cell).join("sweep.csv"),
            &metric_csv("t_w", &rows),
        )?;
        per_cell.push((cell, rows));
    }
    let summary = mean_rows(&per_cell.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>());
    write_text(&cfg.out.join("sweep.csv"), &metric_csv("t_w", &summary))?;
    Ok(TableOutcome { per_cell, summary })
}
