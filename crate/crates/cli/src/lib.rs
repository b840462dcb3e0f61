//! Command-line pipeline over `sentinel-core`: corpus generation, training,
//! evaluation and analysis, each reading a shared INI configuration.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{analyze, eval, gen, train};
pub use config::RunConfig;

/// Exit status for contract or configuration errors.
pub const EXIT_CONFIG: i32 = 1;
/// Exit status for I/O or file-format errors.
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] sentinel_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) if e.is_io_or_format() => EXIT_IO,
            CliError::Core(_) => EXIT_CONFIG,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sentinel", version, about = "Adaptive attention captioning on synthetic grid scenes")]
pub struct Cli {
    #[command(flatten)]
    pub shared: Shared,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Shared {
    /// INI file with a [section] per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the corpus splits and vocabulary.
    Gen,
    /// Train one model variant.
    Train(TrainArgs),
    /// Decode the test and validation splits and score BLEU.
    Eval(EvalArgs),
    /// Grounding, localization and entropy reports from decoded traces.
    Analyze(AnalyzeArgs),
    /// Print every configuration key with its default.
    Config,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// spatial or adaptive.
    #[arg(long)]
    pub model: Option<String>,
    /// Corpus directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// spatial or adaptive; picks the default checkpoint.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    /// Decode greedily.
    #[arg(long)]
    pub greedy: bool,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test-split traces.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Validation traces used to pick thresholds.
    #[arg(long)]
    pub val_traces: Option<PathBuf>,
    /// Second test trace set for the comparison row.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long)]
    pub compare_val: Option<PathBuf>,
    /// Scenes whose attention maps are exported.
    #[arg(long)]
    pub maps: Option<usize>,
}

fn path_flag(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// Run one parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut cfg = match &cli.shared.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.global.set("seed", cli.shared.seed.map(|s| s.to_string()));
    cfg.global.set("out", path_flag(&cli.shared.out));
    let force = cli.shared.force;
    match &cli.command {
        Command::Gen => gen(&cfg.global, &cfg.section("gen"), force).map(|_| ()),
        Command::Train(a) => {
            let mut s = cfg.section("train");
            s.set("model", a.model.clone());
            s.set("data", path_flag(&a.data));
            s.set("max_epochs", a.max_epochs.map(|v| v.to_string()));
            s.set("learning_rate", a.learning_rate.map(|v| v.to_string()));
            train(&cfg.global, &s, force, |row| {
                eprintln!(
                    "epoch {:>3}  loss {:.4}  val bleu-4 {:.4}  mean beta {:.3}",
                    row.epoch, row.loss, row.bleu4, row.mean_beta
                )
            })
            .map(|_| ())
        }
        Command::Eval(a) => {
            let mut s = cfg.section("eval");
            s.set("model", a.model.clone());
            s.set("data", path_flag(&a.data));
            s.set("checkpoint", path_flag(&a.checkpoint));
            s.set("beam", a.beam.map(|v| v.to_string()));
            if a.greedy {
                s.set("greedy", Some("true".into()));
            }
            eval(&cfg.global, &s, force).map(|_| ())
        }
        Command::Analyze(a) => {
            let mut s = cfg.section("analyze");
            s.set("data", path_flag(&a.data));
            s.set("traces", path_flag(&a.traces));
            s.set("val_traces", path_flag(&a.val_traces));
            s.set("compare", path_flag(&a.compare));
            s.set("compare_val", path_flag(&a.compare_val));
            s.set("maps", a.maps.map(|v| v.to_string()));
            analyze(&cfg.global, &s, force).map(|_| ())
        }
        Command::Config => {
            print!("{}", config::reference());
            Ok(())
        }
    }
}
