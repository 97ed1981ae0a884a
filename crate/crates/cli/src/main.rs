mod commands;
mod defaults;
mod error;

use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "flipdiag", version, about = "Removal-based explanations and diagnostics for binary classifiers")]
#[command(args_override_self = true)]
struct Cli {
    /// TOML file with flag defaults (top-level keys, or a table per subcommand).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic sparse dataset with a planted logistic ground truth.
    Synth(SynthArgs),
    /// Fit a reference model (or wrap an external one) and calibrate its threshold.
    Train(TrainArgs),
    /// Explain every item of a dataset and write JSONL plus a run manifest.
    Explain(ExplainArgs),
    /// Write a static JSON report: summary metrics and the top explanation groups.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Answer scoring requests for a model artifact on stdin/stdout.
    BridgeServe(BridgeServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[arg(long, default_value = "sparse")]
    pub format: flipdiag::data::Format,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub items: usize,
    #[arg(long, default_value_t = 400)]
    pub features: usize,
    #[arg(long, default_value_t = 10.0)]
    pub mean_active: f64,
    #[arg(long, default_value_t = 0.28)]
    pub positive_rate: f64,
    #[arg(long, default_value_t = 60)]
    pub signal: usize,
    /// Extra named feature, `name:frequency:weight`; repeatable.
    #[arg(long, value_name = "SPEC")]
    pub plant: Vec<String>,
    /// `name:fraction`: that fraction of items holds only the planted feature.
    #[arg(long, value_name = "SPEC")]
    pub sole: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    NaiveBayes,
    Bridge,
}

#[derive(Args, Debug, Clone, Default)]
pub struct BridgeArgs {
    /// External model started as `sh -c <command>`.
    #[arg(long, value_name = "COMMAND")]
    pub bridge_cmd: Option<String>,
    /// External model reachable at `<url>/score`.
    #[arg(long, value_name = "URL", conflicts_with = "bridge_cmd")]
    pub bridge_url: Option<String>,
    /// Seconds before a bridge request is retried.
    #[arg(long, default_value_t = 30.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 3)]
    pub attempts: usize,
    /// Child processes in subprocess mode.
    #[arg(long, default_value_t = 1)]
    pub connections: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training fraction of the random split.
    #[arg(long, default_value_t = 0.2)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "logistic")]
    pub model: ModelKind,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,
    #[command(flatten)]
    pub bridge: BridgeArgs,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Model artifact written by `train`.
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub bridge: BridgeArgs,
    /// Threshold for a bridge model given without an artifact.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub parallelism: usize,
    /// Disable the shared score cache.
    #[arg(long)]
    pub no_cache: bool,
    #[arg(long, default_value_t = 1e-12)]
    pub plateau_eps: f64,
    /// Explanation file (JSON Lines).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    /// Run manifest; defaults to the output path with `.manifest.json`.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub explanations: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Number of groups listed, largest first.
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    #[arg(long, default_value_t = flipdiag::metrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Report file; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Registry of datasets, models and runs; defaults to the `--config` file.
    #[arg(long, value_name = "PATH")]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

#[derive(Args, Debug)]
pub struct BridgeServeArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,
}

fn subcommand_of(args: &[String]) -> Option<&str> {
    let mut iter = args.iter().skip(1);
    while let Some(a) = iter.next() {
        if a == "--config" {
            iter.next();
        } else if !a.starts_with('-') {
            return Some(a);
        }
    }
    None
}

fn with_defaults(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(path) = defaults::config_path(&args) else {
        return Ok(args);
    };
    let Some(sub) = subcommand_of(&args).map(str::to_string) else {
        return Ok(args);
    };
    let command = Cli::command();
    let Some(sc) = command.find_subcommand(&sub) else {
        return Ok(args);
    };
    let accepted: Vec<String> = sc
        .get_arguments()
        .filter_map(|a| a.get_long())
        .filter(|l| *l != "config")
        .map(str::to_string)
        .collect();
    defaults::splice(args, &path, &sub, &accepted)
}

fn run() -> Result<(), CliError> {
    let args = with_defaults(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::usage(e.to_string().trim_end().to_string())),
    };
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Explain(a) => commands::explain(a),
        Command::Report(a) => commands::report(a),
        Command::Serve(a) => commands::serve(a, cli.config),
        Command::BridgeServe(a) => commands::bridge_serve(a),
    }
}

fn main() {
    if let Err(e) = run() {
        e.report();
        std::process::exit(e.exit_code);
    }
}
