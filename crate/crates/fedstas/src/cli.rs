//! `run`, `partition` and `compare` subcommands.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fedstas_core::data::{label_entropy, partition};
use fedstas_core::engine::{Simulation, StrategyKind};
use fedstas_core::sampling::AggregationMode;

use crate::config::{self, dataset_shape, ConfigError, RunConfig};
use crate::files::{
    self, Manifest, Outputs, RoundLog, RunStatus, CONFIG_FILE, HISTOGRAM_FILE, METRICS_FILE,
    MODEL_FILE, PARTITION_FILE,
};

#[derive(Debug, Parser)]
#[command(
    name = "fedstas",
    version,
    about = "Federated learning client/data sampling simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write its run directory.
    Run(RunArgs),
    /// Write the client partition and its per-client label histogram.
    Partition(PartitionArgs),
    /// Merge the metrics of finished runs and rank them by final accuracy.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Replaces `master_seed`.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory; replaces `output.dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Sets a dotted config key, e.g. `--set train.learning_rate=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Replaces `strategy.name`.
    #[arg(long, value_name = "NAME", value_parser = parse_strategy)]
    pub strategy: Option<StrategyKind>,
    /// Replaces `strategy.aggregation` (`plain` or `ht-corrected`).
    #[arg(long = "strategy.aggregation", value_name = "MODE", value_parser = parse_aggregation)]
    pub aggregation: Option<AggregationMode>,
}

#[derive(Debug, Clone, Args)]
pub struct PartitionArgs {
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Run directories written by `run`.
    #[arg(required = true, num_args = 2..)]
    pub runs: Vec<PathBuf>,
    /// Merged CSV destination.
    #[arg(long, value_name = "FILE", default_value = "comparison.csv")]
    pub out: PathBuf,
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    StrategyKind::parse(s)
        .ok_or_else(|| format!("unknown strategy `{s}` (uniform, fedsts, fedstas, fedstas-dp)"))
}

fn parse_aggregation(s: &str) -> Result<AggregationMode, String> {
    match s {
        "plain" => Ok(AggregationMode::Plain),
        "ht-corrected" => Ok(AggregationMode::HtCorrected),
        _ => Err(format!(
            "unknown aggregation mode `{s}` (plain, ht-corrected)"
        )),
    }
}

fn aggregation_name(mode: AggregationMode) -> &'static str {
    match mode {
        AggregationMode::Plain => "plain",
        AggregationMode::HtCorrected => "ht-corrected",
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for failures while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

fn runtime(context: impl std::fmt::Display) -> impl FnOnce(io::Error) -> CliError {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

impl Overrides {
    fn pairs(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let mut pairs = self
            .set
            .iter()
            .map(|s| config::split_override(s))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(seed) = self.seed {
            pairs.push(("master_seed".into(), seed.to_string()));
        }
        if let Some(out) = &self.out {
            pairs.push(("output.dir".into(), toml_string(&out.to_string_lossy())));
        }
        Ok(pairs)
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Partition(args) => cmd_partition(&args),
        Command::Compare(args) => cmd_compare(&args),
    }
}

/// Exit status for a finished command, printing the error if there was one.
pub fn exit_status(result: Result<(), CliError>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let mut pairs = args.common.pairs()?;
    if let Some(kind) = args.strategy {
        pairs.push(("strategy.name".into(), toml_string(kind.name())));
    }
    if let Some(mode) = args.aggregation {
        pairs.push((
            "strategy.aggregation".into(),
            toml_string(aggregation_name(mode)),
        ));
    }
    let cfg = config::load(&args.common.config, &pairs)?;
    let (train, test) = cfg
        .load_dataset()
        .map_err(|e| CliError::Runtime(format!("dataset: {e}")))?;
    let (input_dim, num_classes) = dataset_shape(&train, &test);
    let experiment = cfg.experiment_config(input_dim, num_classes)?;

    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(runtime(dir.display()))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml()).map_err(runtime(CONFIG_FILE))?;
    let mut manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        core_version: fedstas_core::VERSION.into(),
        strategy: cfg.strategy(),
        master_seed: cfg.master_seed,
        config: serde_json::to_value(&cfg).expect("config serializes"),
        status: RunStatus::Running,
        started_at: now(),
        finished_at: None,
        rounds_completed: 0,
        size_reports: 0,
        error: None,
        outputs: Outputs::default(),
    };
    files::write_manifest(&dir, &manifest).map_err(runtime("manifest"))?;

    let result = drive(&cfg, experiment, &train, &test, &dir, &mut manifest);
    manifest.finished_at = Some(now());
    match &result {
        Ok(()) => manifest.status = RunStatus::Completed,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    files::write_manifest(&dir, &manifest).map_err(runtime("manifest"))?;
    result
}

fn drive(
    cfg: &RunConfig,
    experiment: fedstas_core::engine::ExperimentConfig,
    train: &[fedstas_core::model::Example],
    test: &[fedstas_core::model::Example],
    dir: &Path,
    manifest: &mut Manifest,
) -> Result<(), CliError> {
    let rounds = experiment.rounds;
    let mut sim = Simulation::new(experiment, cfg.strategy(), train, test)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    files::write_partition(&dir.join(PARTITION_FILE), sim.partition())
        .map_err(runtime(PARTITION_FILE))?;
    files::write_label_histogram(&dir.join(HISTOGRAM_FILE), sim.partition())
        .map_err(runtime(HISTOGRAM_FILE))?;
    let mut log = RoundLog::create(dir).map_err(runtime(METRICS_FILE))?;
    let mut last = None;
    for _ in 0..rounds {
        let start = Instant::now();
        let step = sim.run_round();
        manifest.rounds_completed = sim.round();
        manifest.size_reports = sim.size_reports();
        let mut rec = step.map_err(|e| CliError::Runtime(e.to_string()))?;
        if cfg.output.record_wall_time {
            rec.wall_time_ms = Some(start.elapsed().as_millis() as u64);
        }
        log.append(&rec).map_err(runtime(METRICS_FILE))?;
        last = Some(rec);
    }
    files::write_model(&dir.join(MODEL_FILE), sim.params()).map_err(runtime(MODEL_FILE))?;
    if let Some(rec) = last {
        println!(
            "{} ({}): {} rounds, final test accuracy {:.4}, train loss {:.4} -> {}",
            cfg.strategy.name.name(),
            aggregation_name(cfg.strategy.aggregation),
            rec.round,
            rec.test_accuracy,
            rec.train_loss,
            dir.display()
        );
    }
    Ok(())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn cmd_partition(args: &PartitionArgs) -> Result<(), CliError> {
    let cfg = config::load(&args.common.config, &args.common.pairs()?)?;
    let (train, _) = cfg
        .load_dataset()
        .map_err(|e| CliError::Runtime(format!("dataset: {e}")))?;
    let part = partition(&train, &cfg.recipe()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).map_err(runtime(dir.display()))?;
    files::write_partition(&dir.join(PARTITION_FILE), &part).map_err(runtime(PARTITION_FILE))?;
    files::write_label_histogram(&dir.join(HISTOGRAM_FILE), &part)
        .map_err(runtime(HISTOGRAM_FILE))?;
    let mut entropies: Vec<f64> = part
        .label_histogram
        .iter()
        .map(|h| label_entropy(h))
        .collect();
    entropies.sort_by(f64::total_cmp);
    let sizes = part.sizes();
    println!(
        "{} clients, sizes {}..={}, median label entropy {:.3} nats -> {}",
        sizes.len(),
        sizes.iter().min().copied().unwrap_or(0),
        sizes.iter().max().copied().unwrap_or(0),
        entropies.get(entropies.len() / 2).copied().unwrap_or(0.0),
        dir.display()
    );
    Ok(())
}

/// Final-round summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: String,
    pub strategy: String,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub final_train_loss: f64,
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let mut summaries = Vec::new();
    let mut partitions = Vec::new();
    let mut merged = csv::Writer::from_path(&args.out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;
    let csv_err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", args.out.display()));
    merged
        .write_record(["run", "strategy", "round", "train_loss", "test_accuracy"])
        .map_err(csv_err)?;
    for dir in &args.runs {
        if !dir.is_dir() {
            return Err(CliError::Runtime(format!(
                "{}: not a run directory",
                dir.display()
            )));
        }
        let manifest = files::read_manifest(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
        let rows = files::read_metrics(&dir.join(METRICS_FILE))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let last = rows
            .last()
            .ok_or_else(|| CliError::Runtime(format!("{}: no rounds recorded", dir.display())))?;
        let run = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let strategy = match manifest.strategy.aggregation {
            AggregationMode::Plain => manifest.strategy.kind.name().to_string(),
            mode => format!(
                "{}/{}",
                manifest.strategy.kind.name(),
                aggregation_name(mode)
            ),
        };
        for row in &rows {
            merged
                .write_record([
                    run.clone(),
                    strategy.clone(),
                    row.round.to_string(),
                    row.train_loss.to_string(),
                    row.test_accuracy.to_string(),
                ])
                .map_err(csv_err)?;
        }
        summaries.push(RunSummary {
            run,
            strategy,
            rounds: last.round,
            final_accuracy: last.test_accuracy,
            best_accuracy: rows
                .iter()
                .map(|r| r.test_accuracy)
                .fold(f64::NEG_INFINITY, f64::max),
            final_train_loss: last.train_loss,
        });
        partitions.push((dir.clone(), fs::read(dir.join(PARTITION_FILE)).ok()));
    }
    merged
        .flush()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", args.out.display())))?;

    let (first_dir, first) = &partitions[0];
    for (dir, bytes) in &partitions[1..] {
        if bytes.is_none() || first.is_none() || bytes != first {
            eprintln!(
                "warning: {} and {} do not share a partition; accuracies are not directly comparable",
                first_dir.display(),
                dir.display()
            );
        }
    }

    rank(&mut summaries);
    let stdout = io::stdout();
    print_summary(&mut stdout.lock(), &summaries).map_err(runtime("stdout"))?;
    println!("merged metrics -> {}", args.out.display());
    Ok(())
}

/// Sorts by final accuracy, best first; ties keep argument order.
pub fn rank(summaries: &mut [RunSummary]) {
    summaries.sort_by(|a, b| b.final_accuracy.total_cmp(&a.final_accuracy));
}

pub fn print_summary<W: Write>(out: &mut W, summaries: &[RunSummary]) -> io::Result<()> {
    let top = summaries.first().map_or(0.0, |s| s.final_accuracy);
    let width = summaries
        .iter()
        .map(|s| s.run.len())
        .max()
        .unwrap_or(3)
        .max(3);
    let swidth = summaries
        .iter()
        .map(|s| s.strategy.len())
        .max()
        .unwrap_or(8)
        .max(8);
    writeln!(
        out,
        "{:>4}  {:<width$}  {:<swidth$}  {:>6}  {:>9}  {:>9}  {:>9}  {:>10}",
        "rank", "run", "strategy", "rounds", "final_acc", "best_acc", "delta_pp", "train_loss"
    )?;
    for (i, s) in summaries.iter().enumerate() {
        writeln!(
            out,
            "{:>4}  {:<width$}  {:<swidth$}  {:>6}  {:>9.4}  {:>9.4}  {:>9.2}  {:>10.4}",
            i + 1,
            s.run,
            s.strategy,
            s.rounds,
            s.final_accuracy,
            s.best_accuracy,
            100.0 * (s.final_accuracy - top),
            s.final_train_loss
        )?;
    }
    Ok(())
}
