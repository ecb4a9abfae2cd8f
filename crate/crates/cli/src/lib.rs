//! The `mmm` command line: `train`, `evaluate`, `curves` and `report`.
//!
//! Exit codes: 0 success, 2 bad flags or configuration, 3 data or missing
//! artifacts, 4 training failure.

pub mod artifacts;
pub mod config;
pub mod report;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mmm_core::curves::{fit_curve, CurveData, CurveLevel, FittedCurve};
use mmm_core::model::{decompose_contributions, forward, Checkpoint};
use mmm_core::panel::{apply_scaling, load_csv, SplitSpec};
use mmm_core::trainer::{evaluate, train, MetricsDocument};
use serde::Serialize;

use artifacts::Table;
use config::{FlagOverrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Io(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Training(_) => 4,
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "mmm", version, about = "Train and report marketing mix models on regional weekly panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write metrics, checkpoint, edges and contributions.
    Train(TrainArgs),
    /// Score a saved checkpoint against a panel.
    Evaluate(EvaluateArgs),
    /// Fit response curves for every channel.
    Curves(CurvesArgs),
    /// Render the HTML report for a run directory.
    Report(Shared),
}

#[derive(Debug, Args)]
struct Shared {
    /// Panel CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// TOML file with [train], [data] and [report] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    holdout_weeks: Option<usize>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Panel CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    rest: SharedNoData,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Panel CSV.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    rest: SharedNoData,
}

#[derive(Debug, Args)]
struct CurvesArgs {
    #[command(flatten)]
    shared: Shared,
    /// Raw observations with columns channel,x,y instead of a run's contributions.
    #[arg(long)]
    points: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SharedNoData {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    holdout_weeks: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

impl SharedNoData {
    fn with_data(self, data: PathBuf) -> Shared {
        Shared {
            data: Some(data),
            config: self.config,
            out: self.out,
            seed: self.seed,
            holdout_weeks: self.holdout_weeks,
            quiet: self.quiet,
        }
    }
}

impl Shared {
    fn resolve(&self, epochs: Option<usize>) -> Result<RunConfig, CliError> {
        let flags = FlagOverrides { seed: self.seed, holdout_weeks: self.holdout_weeks, epochs };
        RunConfig::resolve(self.data.clone(), self.out.clone(), self.config.as_deref(), &flags)
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => {
            let shared = a.rest.with_data(a.data);
            let cfg = shared.resolve(a.epochs)?;
            run_train(&cfg, shared.quiet)
        }
        Command::Evaluate(a) => {
            let shared = a.rest.with_data(a.data);
            run_evaluate(&shared.resolve(None)?, shared.quiet)
        }
        Command::Curves(a) => run_curves(&a.shared.resolve(None)?, a.points.as_deref(), a.shared.quiet).map(|_| ()),
        Command::Report(s) => run_report(&s.resolve(None)?, s.quiet),
    }
}

fn load_panel(cfg: &RunConfig) -> Result<mmm_core::panel::PanelDataset, CliError> {
    let path = cfg.data.as_ref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    load_csv(path, &cfg.schema).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn run_train(cfg: &RunConfig, quiet: bool) -> Result<(), CliError> {
    let data = load_panel(cfg)?;
    ensure_out(&cfg.out)?;
    let (params, report) = train(&data, &cfg.train).map_err(|e| match e {
        mmm_core::Error::InvalidConfig(m) => CliError::Usage(m),
        mmm_core::Error::InvalidSplit(m) => CliError::Usage(format!("invalid split: {m}")),
        other => CliError::Training(other.to_string()),
    })?;
    let doc = MetricsDocument::from_report(&report);
    artifacts::write_json(&cfg.out.join(artifacts::METRICS), &doc)?;

    let mut ck = Checkpoint::new(&params, cfg.train.seed, cfg.train.burn_in);
    ck.scaling = Some(report.scaling.clone());
    ck.region_labels = data.region_labels.clone();
    ck.channel_labels = data.channel_labels.clone();
    ck.control_labels = data.control_labels.clone();
    let ck_path = cfg.out.join(artifacts::CHECKPOINT);
    ck.save(&ck_path).map_err(|e| CliError::io(&ck_path, e))?;

    let edges_path = cfg.out.join(artifacts::EDGES);
    let file = fs::File::create(&edges_path).map_err(|e| CliError::io(&edges_path, e))?;
    report.edges.write_csv(file, &data.channel_labels).map_err(|e| CliError::io(&edges_path, e))?;

    let scaled = apply_scaling(&data, &report.scaling).map_err(|e| CliError::Training(e.to_string()))?;
    let trace = forward(&params, &scaled, 0).map_err(|e| CliError::Training(e.to_string()))?;
    let contributions = decompose_contributions(&trace, &report.scaling);
    artifacts::write_contributions(&cfg.out.join(artifacts::CONTRIBUTIONS), &data, &contributions)?;
    artifacts::write_predictions(&cfg.out.join(artifacts::PREDICTIONS), &data, &contributions)?;

    if !quiet {
        println!(
            "train R2 {}  holdout R2 {}  gap {}  h {}",
            doc.train_r2, doc.holdout_r2, doc.gap, doc.final_h
        );
        for w in &doc.warnings {
            println!("warning: {w}");
        }
        println!("wrote {}", cfg.out.display());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvaluationDocument {
    train_r2: f64,
    holdout_r2: f64,
    gap: f64,
    train_rmse: f64,
    holdout_rmse: f64,
    train_relative_error: f64,
    holdout_relative_error: f64,
    seed: u64,
    train_weeks: usize,
    holdout_weeks: usize,
}

fn load_checkpoint(dir: &Path) -> Result<Checkpoint, CliError> {
    let path = dir.join(artifacts::CHECKPOINT);
    if !path.exists() {
        return Err(CliError::Data(format!("missing run artifact {}", path.display())));
    }
    Checkpoint::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn run_evaluate(cfg: &RunConfig, quiet: bool) -> Result<(), CliError> {
    let ck = load_checkpoint(&cfg.out)?;
    let params = ck.restore().map_err(|e| CliError::Data(e.to_string()))?;
    let scaling = ck.scaling.clone().ok_or_else(|| CliError::Data("checkpoint has no scaling".into()))?;
    let data = load_panel(cfg)?;
    if !ck.channel_labels.is_empty() && ck.channel_labels != data.channel_labels {
        return Err(CliError::Data("panel channels differ from the checkpoint".into()));
    }
    let split = SplitSpec::with_holdout(data.weeks, cfg.train.holdout_weeks).map_err(|e| CliError::Usage(e.to_string()))?;
    let scaled = apply_scaling(&data, &scaling).map_err(|e| CliError::Data(e.to_string()))?;
    let score = |range| evaluate(&params, &scaled, &scaling, range).map_err(|e| CliError::Data(e.to_string()));
    let train_m = score(ck.burn_in.min(split.train_weeks)..split.train_weeks)?;
    let hold_m = score(split.train_weeks..data.weeks)?;
    let doc = EvaluationDocument {
        train_r2: train_m.r2,
        holdout_r2: hold_m.r2,
        gap: train_m.r2 - hold_m.r2,
        train_rmse: train_m.rmse,
        holdout_rmse: hold_m.rmse,
        train_relative_error: train_m.relative_error,
        holdout_relative_error: hold_m.relative_error,
        seed: ck.seed,
        train_weeks: split.train_weeks,
        holdout_weeks: split.holdout_weeks,
    };
    artifacts::write_json(&cfg.out.join(artifacts::EVALUATION), &doc)?;
    if !quiet {
        println!("train R2 {}  holdout R2 {}  gap {}", doc.train_r2, doc.holdout_r2, doc.gap);
    }
    Ok(())
}

/// One fitted (or flagged) channel.
pub struct CurveResult {
    pub channel: String,
    pub points: Vec<(f64, f64)>,
    pub fit: Option<FittedCurve>,
}

fn curve_inputs(cfg: &RunConfig, points: Option<&Path>) -> Result<artifacts::ChannelPoints, CliError> {
    if let Some(p) = points {
        return artifacts::read_points(p);
    }
    let table = Table::read(&cfg.out.join(artifacts::CONTRIBUTIONS))?;
    let mut labels = load_checkpoint(&cfg.out).map(|c| c.channel_labels).unwrap_or_default();
    if labels.is_empty() {
        let cc = table.column("channel")?;
        for row in &table.rows {
            if !labels.contains(&row[cc]) {
                labels.push(row[cc].clone());
            }
        }
    }
    let pts = artifacts::overall_points(&table, &labels)?;
    Ok((labels, pts))
}

/// Fits every channel, writes `curves.csv` and one HTML page per channel.
pub fn run_curves(cfg: &RunConfig, points: Option<&Path>, quiet: bool) -> Result<Vec<CurveResult>, CliError> {
    let (labels, pts) = curve_inputs(cfg, points)?;
    ensure_out(&cfg.out)?;
    let mut results = Vec::with_capacity(labels.len());
    for (channel, points) in labels.into_iter().zip(pts) {
        let fit = CurveData::new(points.clone(), CurveLevel::Overall).and_then(|d| fit_curve(&d));
        match &fit {
            Ok(c) => {
                if !quiet {
                    println!("{channel}: slope {} saturation {}", c.slope, c.saturation);
                }
            }
            Err(e) => eprintln!("warning: {channel}: {e}"),
        }
        results.push(CurveResult { channel, points, fit: fit.ok() });
    }
    let rows: Vec<(String, Option<FittedCurve>)> = results.iter().map(|r| (r.channel.clone(), r.fit)).collect();
    let curves_path = cfg.out.join(artifacts::CURVES);
    artifacts::write_curves(&curves_path, &rows)?;
    let table = Table::read(&curves_path)?;
    for (i, r) in results.iter().enumerate() {
        if r.fit.is_some() {
            let page = report::curve_page(&table, i, &r.points)?;
            let path = cfg.out.join(format!("curve_{}.html", artifacts::slug(&r.channel)));
            fs::write(&path, page).map_err(|e| CliError::io(&path, e))?;
        }
    }
    if results.iter().all(|r| r.fit.is_none()) {
        return Err(CliError::Data("no channel could be fitted".into()));
    }
    Ok(results)
}

pub fn run_report(cfg: &RunConfig, quiet: bool) -> Result<(), CliError> {
    for name in [artifacts::METRICS, artifacts::CHECKPOINT, artifacts::EDGES, artifacts::CONTRIBUTIONS, artifacts::PREDICTIONS] {
        if !cfg.out.join(name).exists() {
            return Err(CliError::Data(format!("missing run artifact {}", cfg.out.join(name).display())));
        }
    }
    if !cfg.out.join(artifacts::CURVES).exists() {
        run_curves(cfg, None, true)?;
    }
    let html = report::build_report(&cfg.out, cfg.report)?;
    let path = cfg.out.join(artifacts::REPORT);
    fs::write(&path, html).map_err(|e| CliError::io(&path, e))?;
    if !quiet {
        println!("wrote {}", path.display());
    }
    Ok(())
}
