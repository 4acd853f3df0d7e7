//! `brainprint`: generate phantom data, train the fingerprint encoder, build
//! and query indexes, evaluate, export saliency maps and run ablations.
//!
//! Exit codes: 0 success, 2 invalid arguments or config, 3 I/O or malformed
//! files, 4 non-finite numerics, 5 unknown scan id.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use brainprint::data::Split;
use brainprint::training::{BetaSchedule, LossMode};
use brainprint::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "brainprint", version, about = "Brain-slice fingerprinting and same-subject retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a phantom dataset under OUT/adni-like (and OUT/synt-contr).
    GenData(GenDataArgs),
    /// Write freshly initialized encoder parameters.
    InitCheckpoint(InitArgs),
    /// Train on the train split, selecting the epoch by validation mAP.
    Train(TrainArgs),
    /// Write one JSON fingerprint per line.
    Embed(EmbedArgs),
    /// Build an exact or inverted-file index file.
    Index(IndexArgs),
    /// Print the ranked neighbours of one scan.
    Query(QueryArgs),
    /// Leave-one-out retrieval evaluation of one split.
    Eval(EvalArgs),
    /// Export the averaged Grad-CAM map of one scan.
    Saliency(SaliencyArgs),
    /// Train every loss/schedule variant on seeded phantom benchmarks.
    Ablate(AblateArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Number of subjects.
    #[arg(long, default_value_t = 90)]
    pub subjects: usize,
    /// Mean scans per subject (counts are drawn from mean ± mean/2).
    #[arg(long, default_value_t = 5)]
    pub scans_mean: usize,
    /// Image side in pixels.
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    /// Dataset seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the contrast-variant copy.
    #[arg(long)]
    pub contrast_variants: bool,
}

#[derive(Args)]
pub struct ConfigArg {
    /// Run configuration JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint.dbpckpt and train_log.jsonl.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides train.beta_schedule: constant, step, iter or linear.
    #[arg(long, value_parser = BetaSchedule::from_str)]
    pub beta: Option<BetaSchedule>,
    /// Overrides train.loss: bt, infonce or combined.
    #[arg(long, value_parser = LossMode::from_str)]
    pub loss: Option<LossMode>,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoint path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Restrict to one split (train, val, test); default all scans.
    #[arg(long, value_parser = Split::from_str)]
    pub split: Option<Split>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub source: DataArgs,
    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct IndexArgs {
    #[command(flatten)]
    pub source: DataArgs,
    /// Add an inverted-file partition.
    #[arg(long)]
    pub ivf: bool,
    /// Overrides retrieval.n_cells.
    #[arg(long)]
    pub n_cells: Option<usize>,
    /// Index file path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Number of inverted-file cells to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    All,
    Cells(usize),
}

impl FromStr for Probe {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "max" | "all" => Ok(Probe::All),
            n => match n.parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("expected a positive integer or `max`, got {n:?}")),
                Ok(v) => Ok(Probe::Cells(v)),
            },
        }
    }
}

#[derive(Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Index file written by `index`.
    #[arg(long)]
    pub index: PathBuf,
    /// Scan id to query.
    #[arg(long)]
    pub query_scan: String,
    /// Overrides eval.k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Search through the inverted file instead of exhaustively.
    #[arg(long)]
    pub ivf: bool,
    /// Cells to probe, or `max`; overrides retrieval.n_probe.
    #[arg(long, value_parser = Probe::from_str)]
    pub n_probe: Option<Probe>,
    /// Keep the query scan itself in the listing.
    #[arg(long)]
    pub include_self: bool,
    /// Embed the query from this dataset instead of reading it from the index
    /// (requires --checkpoint).
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    /// Checkpoint used with --data.
    #[arg(long, requires = "data")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoint path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory containing manifest.jsonl.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate.
    #[arg(long, default_value = "test", value_parser = Split::from_str)]
    pub split: Split,
    /// Overrides eval.k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Earlier report to compare against with a paired t-test on AP@k.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Record mean extraction and query times (makes the report
    /// non-reproducible).
    #[arg(long)]
    pub timed: bool,
    /// Report JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Checkpoint path.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// DBPIMG1 slice file.
    #[arg(long)]
    pub scan: PathBuf,
    /// Use the slice as stored, without clipping and normalization.
    #[arg(long)]
    pub raw: bool,
    /// Output DBPIMG1 map path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Benchmark configuration JSON; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Output directory for per-seed data and ablation.json.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) | Error::Json(_) => 2,
        Error::Io { .. } | Error::Format { .. } => 3,
        Error::NonFinite(_) | Error::NonFiniteLoss { .. } => 4,
        Error::NotFound(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::InitCheckpoint(a) => commands::init_checkpoint(&a),
        Command::Train(a) => commands::train(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Index(a) => commands::index(&a),
        Command::Query(a) => commands::query(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Saliency(a) => commands::saliency(&a),
        Command::Ablate(a) => commands::ablate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
