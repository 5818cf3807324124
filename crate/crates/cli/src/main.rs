//! `simcgnn`: prepare datasets, train, evaluate and analyze models.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or configuration error,
//! 3 data or I/O error, 4 training diverged, 5 incompatible artifacts.

mod config;
mod error;
mod evaluate;
mod manifest;
mod prepare;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliResult;

#[derive(Parser)]
#[command(
    name = "simcgnn",
    version,
    about = "Session-based recommendation with a contrastive gated graph network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a dataset bundle from a click log or the synthetic generator.
    Prepare(PrepareArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Score a checkpoint, and optionally baselines, on the test split.
    Eval(EvalArgs),
    /// Same-last-item confusion histogram and popularity comparison.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    /// `session,timestamp,item,category`, lexical timestamps.
    Yoochoose,
    /// `sessionId;userId;itemId;timeframe;eventdate` with a header.
    Diginetica,
    /// Column layout given by the --delimiter/--*-col flags.
    Custom,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderKindArg {
    Integer,
    Lexical,
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw click log.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Bundle to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "custom")]
    format: Format,
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    #[arg(long)]
    header: bool,
    #[arg(long, default_value_t = 0)]
    session_col: usize,
    #[arg(long, default_value_t = 1)]
    item_col: usize,
    /// Column ordering clicks inside a session; file order when absent.
    #[arg(long)]
    order_col: Option<usize>,
    #[arg(long, value_enum, default_value = "integer")]
    order_kind: OrderKindArg,
    #[arg(long, default_value_t = 5)]
    min_item_count: usize,
    #[arg(long, default_value_t = 2)]
    min_session_len: usize,
    /// Most recent share of sessions used as the test split.
    #[arg(long, conflicts_with = "test_span")]
    test_fraction: Option<f64>,
    /// Sessions ending within this many order units of the newest click are test.
    #[arg(long)]
    test_span: Option<i64>,
    /// Keep only the most recent share of training sessions (e.g. 0.015625).
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Keep at most this many recent items per training prefix.
    #[arg(long)]
    max_prefix: Option<usize>,

    /// Use the synthetic generator instead of an input file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 100)]
    items: usize,
    #[arg(long, default_value_t = 1000)]
    sessions: usize,
    #[arg(long, default_value_t = 1.0)]
    popularity_exponent: f64,
    #[arg(long, default_value_t = 0.0)]
    collision_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    repeat_rate: f64,
    #[arg(long, default_value_t = 0.5)]
    markov_rate: f64,
    #[arg(long, default_value_t = 2)]
    min_len: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset bundle; taken from the manifest with --manifest.
    #[arg(long, required_unless_present = "manifest")]
    data: Option<PathBuf>,
    /// Directory receiving manifest, checkpoint and report.
    #[arg(long)]
    run_dir: PathBuf,
    /// TOML configuration with optional [training], [model], [contrastive].
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Rerun the configuration and dataset recorded in a manifest.
    #[arg(long, conflicts_with_all = ["data", "set", "seed", "epochs", "ablation"])]
    manifest: Option<PathBuf>,
    /// Override a configuration key, e.g. `training.lr=1e-4`.
    #[arg(long, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Ablation switch: contrast, weakneg, norm or pe, `=on` or `=off`.
    #[arg(long, value_name = "FLAG=on|off")]
    ablation: Vec<String>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Comma-separated subset of pop, spop, itemknn.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Raw id of the shared last item, or `auto` for the most frequent one.
    #[arg(long, default_value = "auto")]
    last_item: String,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Second checkpoint for a side-by-side comparison.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare(a) => prepare::run(a),
        Command::Train(a) => train::run(a),
        Command::Eval(a) => evaluate::eval(a),
        Command::Analyze(a) => evaluate::analyze(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("simcgnn: {e}");
            e.exit_code()
        }
    }
}
