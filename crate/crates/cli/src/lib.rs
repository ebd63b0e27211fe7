//! The `ner` command-line driver: data generation, training regimes,
//! evaluation, analyses and the end-to-end `repro` pipeline.

pub mod commands;
pub mod manifest;
pub mod repro;
pub mod spec;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use polyglot_ner::corpus::Split;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit code 1.
    Usage(String),
    /// Failure while doing the work; exit code 2.
    Runtime(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => {
                let mut msg = e.to_string();
                for cause in e.chain().skip(1).map(|c| c.to_string()) {
                    if !msg.contains(&cause) {
                        msg = format!("{msg}: {cause}");
                    }
                }
                f.write_str(&msg)
            }
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<polyglot_ner::Error> for CliError {
    fn from(e: polyglot_ner::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "ner", version, about = "Polyglot named entity recognition laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multilingual corpus suite
    GenSynth(GenSynthArgs),
    /// Train one model per seed on a single language
    Train(TrainArgs),
    /// Train one model per seed on several languages jointly
    TrainPolyglot(PolyglotArgs),
    /// Continue training a checkpoint on one language
    Finetune(FinetuneArgs),
    /// Score a checkpoint on one or more languages
    Eval(EvalArgs),
    /// Magnitude-prune a checkpoint at several fractions and score each
    PruneSweep(PruneArgs),
    /// Estimate the diagonal Fisher information on a language's train split
    Fisher(FisherArgs),
    /// Compare Fisher diagonals by top-k% overlap
    FisherOverlap(OverlapArgs),
    /// Per-class error counts, optionally against a reference model
    Errors(ErrorsArgs),
    /// Fraction of errors on entities that also occur in other languages
    CommonEntities(CommonArgs),
    /// Write byte-window target sequences for a split
    BtsEncode(BtsEncodeArgs),
    /// Turn byte-window target sequences back into byte spans
    BtsDecode(BtsDecodeArgs),
    /// Run the full synthetic pipeline end to end
    Repro(ReproArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenSynthArgs {
    /// Generator config (JSON); defaults to three languages
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Override the generator seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of languages when no config is given
    #[arg(long, conflicts_with = "config")]
    pub languages: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Experiment config (JSON)
    #[arg(long)]
    pub config: PathBuf,
    /// Language data directory; repeat for several (replaces the config list)
    #[arg(long)]
    pub data: Vec<PathBuf>,
    /// Tag set file
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run only this seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without dev improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct PolyglotArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Draw every language equally often per epoch
    #[arg(long)]
    pub uniform_sampling: bool,
}

#[derive(Args, Debug, Clone)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint to start from
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Learning rate for fine-tuning (default: the checkpoint's)
    #[arg(long)]
    pub finetune_lr: Option<f64>,
    /// Start from fresh optimizer moments
    #[arg(long)]
    pub reset_optimizer: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Language data directory; repeat for several
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Split to score
    #[arg(long, default_value = "dev")]
    pub split: Split,
    /// Tag set file
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Output directory for eval.json and eval.tsv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PruneArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Language data directory; repeat for several
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    /// Split to score
    #[arg(long, default_value = "dev")]
    pub split: Split,
    /// Tag set file
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Comma-separated pruned fractions, starting at 0
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// F1 drop in points that counts as over-pruned
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct FisherArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Language data directory
    #[arg(long)]
    pub data: PathBuf,
    /// Tag set file
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Posterior samples per training sentence
    #[arg(long, default_value_t = polyglot_ner::analysis::fisher::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Sampling seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct OverlapArgs {
    /// Fisher diagonal file; repeat at least twice
    #[arg(long, required = true)]
    pub fisher: Vec<PathBuf>,
    /// Comma-separated top-k percentages
    #[arg(long, value_delimiter = ',', default_values_t = polyglot_ner::analysis::DEFAULT_KS)]
    pub ks: Vec<f64>,
    /// Compare each language with the mean of the others instead of pairwise
    #[arg(long)]
    pub vs_rest: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ErrorsArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Checkpoint whose error counts are subtracted
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Language data directory
    #[arg(long)]
    pub data: PathBuf,
    /// Split to score
    #[arg(long, default_value = "dev")]
    pub split: Split,
    /// Tag set file
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Checkpoint file
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Data directory of the evaluated language
    #[arg(long)]
    pub data: PathBuf,
    /// Data directory of another language whose train entities count as common; repeatable
    #[arg(long, required = true)]
    pub other: Vec<PathBuf>,
    /// Split to score
    #[arg(long, default_value = "dev")]
    pub split: Split,
    /// Tag set file
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BtsEncodeArgs {
    /// Language data directory
    #[arg(long)]
    pub data: PathBuf,
    /// Split to encode
    #[arg(long, default_value = "dev")]
    pub split: Split,
    /// Tag set file
    #[arg(long)]
    pub tagset: Option<PathBuf>,
    /// Window size in bytes
    #[arg(long, default_value_t = polyglot_ner::bts_codec::DEFAULT_WINDOW)]
    pub window: usize,
    /// Offset between windows (default: the window size)
    #[arg(long)]
    pub stride: Option<usize>,
    /// Output directory for stream.txt and targets.txt
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct BtsDecodeArgs {
    /// Target file written by bts-encode
    #[arg(long)]
    pub targets: PathBuf,
    /// Byte stream the targets refer to; adds surface text to the spans
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Window size in bytes
    #[arg(long, default_value_t = polyglot_ner::bts_codec::DEFAULT_WINDOW)]
    pub window: usize,
    /// Output directory for spans.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct ReproArgs {
    /// Pipeline config (JSON)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Maximum number of epochs per run
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Epochs without dev improvement before stopping
    #[arg(long)]
    pub patience: Option<usize>,
    /// Posterior samples per sentence for the Fisher analyses
    #[arg(long)]
    pub fisher_samples: Option<usize>,
}

/// Caps the global worker pool at `NER_THREADS` when set.
pub fn configure_threads() {
    let Ok(value) = std::env::var("NER_THREADS") else { return };
    match value.parse::<usize>() {
        Ok(n) if n >= 1 => {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::debug!("worker pool already configured");
            }
        }
        _ => log::warn!("ignoring NER_THREADS={value:?}: expected a positive integer"),
    }
}

pub fn run(command: Command) -> CliResult<()> {
    use commands::*;
    match command {
        Command::GenSynth(a) => gen_synth(&a),
        Command::Train(a) => train_mono(&a),
        Command::TrainPolyglot(a) => train_polyglot(&a),
        Command::Finetune(a) => finetune(&a),
        Command::Eval(a) => eval(&a),
        Command::PruneSweep(a) => prune_sweep(&a),
        Command::Fisher(a) => fisher(&a),
        Command::FisherOverlap(a) => fisher_overlap(&a),
        Command::Errors(a) => errors(&a),
        Command::CommonEntities(a) => common_entities(&a),
        Command::BtsEncode(a) => bts_encode(&a),
        Command::BtsDecode(a) => bts_decode(&a),
        Command::Repro(a) => repro::run_cli(&a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
