//! `sprig`: command-line surface for the subgraph-retrieval QA engine.
//!
//! Subcommands cover the whole workflow: `gen-data` builds a synthetic
//! corpus, `train-cam` fits the hop classifier, `train` runs joint training,
//! `retrieve` dumps prompts and traces for questions, `eval` scores a model
//! or a prediction file, and `ablate` sweeps the retrieval knobs and emits a
//! summary table.
//!
//! Configuration comes from three layers: built-in defaults, an optional
//! `--config` JSON file, and command-line flags, later layers winning. Every
//! file a command writes lands under its `--out` directory. Exit codes: 0 on
//! success, 2 for configuration errors, 3 for data errors, 4 for numeric
//! failures.

mod commands;
mod outdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sprig_core::config::RunConfig;
use sprig_core::CoreError;

fn config_reference() -> String {
    format!("Config file keys and their defaults:\n{}", RunConfig::default_json())
}

#[derive(Parser)]
#[command(
    name = "sprig",
    version,
    about = "Attention-guided subgraph retrieval with a jointly trained reasoner",
    after_help = config_reference()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus (graph plus train/dev/test splits)
    GenData(GenDataArgs),
    /// Train the hop classifier that picks per-question retrieval budgets
    TrainCam(TrainCamArgs),
    /// Jointly train retriever, bridge, and reasoner
    Train(TrainArgs),
    /// Retrieve subgraphs for questions and dump prompts and traces
    Retrieve(RetrieveArgs),
    /// Score a trained model, or an external prediction file, on a dataset
    Eval(EvalArgs),
    /// Sweep retrieval knobs and training modes, emitting a summary table
    Ablate(AblateArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON config file; flags override file values, file values override defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving every file this command writes
    #[arg(long)]
    out: PathBuf,
    /// Root rng seed override (trainer, generator, and hop classifier)
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
#[command(after_help = config_reference())]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of questions to generate
    #[arg(long)]
    questions: Option<usize>,
    /// Minimum gold path depth in hops
    #[arg(long)]
    depth_min: Option<usize>,
    /// Maximum gold path depth in hops
    #[arg(long)]
    depth_max: Option<usize>,
    /// Distractor edges attached to every gold-chain node
    #[arg(long)]
    branching: Option<usize>,
    /// Relation vocabulary size
    #[arg(long)]
    relation_vocab: Option<usize>,
    /// Entities in the disconnected background component
    #[arg(long)]
    background: Option<usize>,
    /// Fraction of questions with a second gold answer
    #[arg(long)]
    multi_answer_fraction: Option<f64>,
}

#[derive(Args)]
#[command(after_help = config_reference())]
struct TrainCamArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Labeled dataset (JSONL); defaults to paths.train from the config
    #[arg(long)]
    data: Option<PathBuf>,
    /// Largest hop count the classifier distinguishes
    #[arg(long)]
    max_hops: Option<usize>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
#[command(after_help = config_reference())]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Knowledge graph file (TSV or JSONL); defaults to paths.kg
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Training split (JSONL); defaults to paths.train
    #[arg(long)]
    train: Option<PathBuf>,
    /// Development split (JSONL); defaults to paths.dev
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Training mode: full, feedback_only, or separate
    #[arg(long)]
    mode: Option<String>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Samples per optimiser step
    #[arg(long)]
    batch_size: Option<usize>,
    /// Non-improving epochs tolerated before early stopping
    #[arg(long)]
    patience: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args)]
#[command(after_help = config_reference())]
struct RetrieveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Knowledge graph file (TSV or JSONL); defaults to paths.kg
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Model checkpoint; defaults to paths.model_checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Hop-classifier checkpoint; defaults to paths.cam_checkpoint
    #[arg(long)]
    cam: Option<PathBuf>,
    /// Single question text (requires --seeds)
    #[arg(long, requires = "seeds")]
    question: Option<String>,
    /// Comma-separated seed entity names for --question
    #[arg(long, requires = "question")]
    seeds: Option<String>,
    /// Dataset (JSONL) whose questions are retrieved instead of --question
    #[arg(long, conflicts_with_all = ["question", "seeds"])]
    data: Option<PathBuf>,
    /// Retrieval depth override (beats the hop classifier)
    #[arg(long)]
    layers: Option<usize>,
    /// Subgraph triple budget override (beats the hop classifier)
    #[arg(long)]
    budget: Option<usize>,
}

#[derive(Args)]
#[command(after_help = config_reference())]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Knowledge graph file (TSV or JSONL); defaults to paths.kg
    #[arg(long)]
    kg: Option<PathBuf>,
    /// Dataset with gold answers (JSONL); defaults to paths.test, then paths.dev
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model checkpoint; defaults to paths.model_checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Score this prediction file (JSONL, {"question","ranked":[..]}) instead of running the engine
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Answer matching: exact or case_fold
    #[arg(long)]
    match_mode: Option<String>,
    /// Keep wall-clock timings in the report (default off, so reports are bit-identical)
    #[arg(long)]
    record_timing: bool,
    /// Retrieval depth override
    #[arg(long)]
    layers: Option<usize>,
    /// Subgraph triple budget override
    #[arg(long)]
    budget: Option<usize>,
    /// Candidates within this fraction of the top probability form the predicted set
    #[arg(long)]
    threshold_ratio: Option<f64>,
}

#[derive(Args)]
#[command(after_help = config_reference())]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Knowledge graph file; with --train and --dev, replaces the synthetic corpus
    #[arg(long, requires = "train", requires = "dev")]
    kg: Option<PathBuf>,
    /// Training split (JSONL)
    #[arg(long, requires = "kg")]
    train: Option<PathBuf>,
    /// Development split (JSONL)
    #[arg(long, requires = "kg")]
    dev: Option<PathBuf>,
    /// Training epochs for the two trained arms
    #[arg(long)]
    epochs: Option<usize>,
    /// Concurrent evaluation threads for the ablation arms
    #[arg(long, default_value_t = 2)]
    workers: usize,
    /// Timed repetitions per dev question in the latency comparison
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Warmup sweeps before timing
    #[arg(long, default_value_t = 1)]
    warmup: usize,
}

fn classify(e: &CoreError) -> (u8, &'static str) {
    match e {
        CoreError::Config(_) => (2, "config"),
        CoreError::Parse { .. }
        | CoreError::Unknown { .. }
        | CoreError::Io { .. }
        | CoreError::Domain(_) => (3, "data"),
        CoreError::Numeric(_) | CoreError::ShapeMismatch { .. } => (4, "numeric"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, tag) = classify(&e);
            eprintln!("error[{tag}]: {e}");
            ExitCode::from(code)
        }
    }
}
