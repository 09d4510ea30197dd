use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mdfa_cli::config::{Overrides, RunConfig};
use mdfa_cli::convert::{convert_csv, parse_filter, ConvertSpec};
use mdfa_cli::exit_code;
use mdfa_cli::pipeline::{self, write_json, MetricRow};
use mdfa_core::data::{write_capacity_csv, write_synthetic_dataset, Dataset, SynthPreset};
use mdfa_core::eval::{evaluate, write_curve_csv, EvalConfig, EvalMode, EvalReport};
use mdfa_core::{Error, Model, ModelVariant, Result};

#[derive(Parser)]
#[command(
    name = "mdfa",
    version,
    about = "Dual-path capacity forecaster for lithium-ion cells"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate leave-one-out runs for one variant.
    Train(RunArgs),
    /// Evaluate a saved checkpoint on a cell.
    Eval(EvalArgs),
    /// Train all six variants and tabulate their metrics.
    Ablate(RunArgs),
    /// Retrain over several window sizes.
    Sweep(SweepArgs),
    /// Write a synthetic dataset (CSV files plus manifest).
    Synth(SynthArgs),
    /// Convert a raw CSV export into the canonical capacity CSV.
    Convert(ConvertArgs),
}

fn parse_variant(s: &str) -> std::result::Result<ModelVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<EvalMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest (JSON).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Held-out cell; all cells in turn when omitted.
    #[arg(long)]
    cell: Option<String>,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<ModelVariant>,
    /// Sliding-window length T_w.
    #[arg(long)]
    window: Option<usize>,
    /// First seed; runs use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// teacher_forced or recursive (curve file and predicted RUL).
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EvalMode>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent seeds.
    #[arg(long)]
    jobs: Option<usize>,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            dataset: self.dataset.clone(),
            cell: self.cell.clone(),
            variant: self.variant,
            window: self.window,
            seed: self.seed,
            runs: self.runs,
            mode: self.mode,
            out: self.out.clone(),
            jobs: self.jobs,
        });
        cfg.quiet |= self.quiet;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated window sizes; overrides the config's `windows`.
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    cell: String,
    #[arg(long, value_parser = parse_mode, default_value = "teacher_forced")]
    mode: EvalMode,
    /// Directory for report.json and curve.csv; defaults to
    /// `eval-{mode}` next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Nasa,
    Calce,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "nasa")]
    preset: PresetArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// Canonical CSV to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    cell: String,
    #[arg(long, default_value_t = 2.0)]
    nominal: f64,
    #[arg(long, default_value = "capacity")]
    capacity_col: String,
    #[arg(long)]
    cycle_col: Option<String>,
    /// Keep rows matching `column=value`.
    #[arg(long)]
    filter: Option<String>,
}

fn print_reports<'a>(rows: impl IntoIterator<Item = (&'a str, &'a EvalReport)>) {
    let opt = |v: Option<usize>| v.map_or("-".to_string(), |c| c.to_string());
    let ms = |v: Option<f64>| v.map_or("-".to_string(), |m| format!("{m:.3}"));
    println!(
        "{:<10} {:<14} {:>8} {:>8} {:>8} {:>8} {:>8} {:>11}",
        "cell", "variant", "r2", "mae", "rmse", "rul_pred", "rul_true", "ms_per_step"
    );
    for (variant, r) in rows {
        println!(
            "{:<10} {:<14} {:>8.4} {:>8.4} {:>8.4} {:>8} {:>8} {:>11}",
            r.cell_id,
            variant,
            r.r2,
            r.mae,
            r.rmse,
            opt(r.rul_pred),
            opt(r.rul_true),
            ms(r.ms_per_step)
        );
    }
}

fn print_table(key: &str, title: &str, rows: &[MetricRow]) {
    println!("{title}");
    println!("{key:<14} {:>8} {:>8} {:>8}", "r2", "mae", "rmse");
    for r in rows {
        println!("{:<14} {:>8.4} {:>8.4} {:>8.4}", r.key, r.r2, r.mae, r.rmse);
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    Dataset::load(cfg.dataset_path()?)
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let dataset = load_dataset(&cfg)?;
    let outcomes = pipeline::train(&cfg, &dataset)?;
    print_reports(outcomes.iter().map(|o| (o.variant.as_str(), &o.aggregate)));
    Ok(())
}

fn cmd_ablate(args: &RunArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let dataset = load_dataset(&cfg)?;
    let table = pipeline::ablate(&cfg, &dataset)?;
    for (cell, rows) in &table.per_cell {
        print_table("variant", cell, rows);
    }
    print_table("variant", "mean over cells", &table.summary);
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut cfg = args.run.resolve()?;
    if let Some(w) = &args.windows {
        cfg.windows = w.clone();
    }
    cfg.validate()?;
    let dataset = load_dataset(&cfg)?;
    let table = pipeline::sweep(&cfg, &dataset)?;
    for (cell, rows) in &table.per_cell {
        print_table("t_w", cell, rows);
    }
    print_table("t_w", "mean over cells", &table.summary);
    Ok(())
}

fn existing(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    existing(&args.checkpoint, "checkpoint")?;
    existing(&args.dataset, "dataset manifest")?;
    let model = Model::load(&args.checkpoint)?;
    let dataset = Dataset::load(&args.dataset)?;
    let test = dataset.cell(&args.cell)?.normalize();
    let cfg = EvalConfig {
        mode: args.mode,
        ..EvalConfig::default()
    };
    let report = evaluate(&model, &test, model.config().seed, &cfg)?;
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args
            .checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval-{}", args.mode)),
    };
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write_json(&out.join("report.json"), &report.without_timing())?;
    write_curve_csv(&out.join("curve.csv"), &report, args.mode)?;
    write_json(
        &out.join("run_meta.json"),
        &serde_json::json!({
            "checkpoint": args.checkpoint,
            "test_seconds": report.test_seconds,
            "ms_per_step": report.ms_per_step,
        }),
    )?;
    print_reports([(model.variant().as_str(), &report)]);
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let preset = match args.preset {
        PresetArg::Nasa => SynthPreset::NasaLike,
        PresetArg::Calce => SynthPreset::CalceLike,
    };
    let manifest = write_synthetic_dataset(&args.out, preset, args.seed)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    existing(&args.input, "input")?;
    let text = std::fs::read_to_string(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let spec = ConvertSpec {
        cell_id: args.cell.clone(),
        nominal_ah: args.nominal,
        capacity_col: args.capacity_col.clone(),
        cycle_col: args.cycle_col.clone(),
        filter: args.filter.as_deref().map(parse_filter).transpose()?,
    };
    let series = convert_csv(&text, &spec)?;
    write_capacity_csv(&args.out, &series)?;
    println!(
        "{}: {} cycles -> {}",
        series.cell_id,
        series.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Convert(a) => cmd_convert(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
