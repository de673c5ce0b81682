//! `bitext`: command-line pipelines over the bitext-core library.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const BUILD_ID: &str = concat!("bitext ", env!("CARGO_PKG_VERSION"));

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(bitext_core::Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Core(bitext_core::Error::format(path.display().to_string(), e.to_string()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl From<bitext_core::Error> for CliError {
    fn from(e: bitext_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) if e.is_numerical() => write!(f, "numerical failure: {e}"),
            CliError::Core(e) => write!(f, "data error: {e}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bitext", version = env!("CARGO_PKG_VERSION"), about = "Train, index, mine and evaluate dual-encoder bitext models")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalArgs {
    /// Config file of `[global]` and `[<command>]` sections with key=value lines.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory that receives every output of the command.
    #[arg(long, global = true, env = "BITEXT_OUT_DIR", default_value = "bitext-out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Single-threaded, fixed-order numerics throughout.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Log at debug level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Induce a subword vocabulary from monolingual text.
    BuildVocab(BuildVocabArgs),
    /// Generate the synthetic cipher bitext corpus.
    Synth(SynthArgs),
    /// MLM/TLM pretraining with progressive stacking.
    Pretrain(PretrainArgs),
    /// Fine-tune the dual encoder on sentence pairs.
    Train(TrainArgs),
    /// Encode sentences into a pool of unit vectors.
    Encode(EncodeArgs),
    /// Build a nearest-neighbour index over a pool.
    Index(IndexArgs),
    /// Query an index with a pool of vectors.
    Search(SearchArgs),
    /// Mine parallel sentences from two monolingual pools.
    Mine(MineArgs),
    /// Precision@1 of sources retrieving gold targets.
    EvalP1(EvalP1Args),
    /// Per-language accuracy and group macro-averages.
    EvalTatoeba(EvalTatoebaArgs),
    /// Best F1 over a score-threshold sweep of candidate pairs.
    EvalBucc(EvalBuccArgs),
    /// Pearson correlation of arc-cosine similarity with graded scores.
    EvalSts(EvalStsArgs),
    /// Vocabulary diagnostics per language.
    Stats(StatsArgs),
    /// Merge metric files into one report.
    Report(ReportArgs),
}

pub const SUBCOMMANDS: &[&str] = &[
    "build-vocab",
    "synth",
    "pretrain",
    "train",
    "encode",
    "index",
    "search",
    "mine",
    "eval-p1",
    "eval-tatoeba",
    "eval-bucc",
    "eval-sts",
    "stats",
    "report",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum PoolingArg {
    Mean,
    Cls,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelShape {
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub max_seq_len: usize,
    #[arg(long, value_enum, default_value_t = PoolingArg::Mean)]
    pub pooling: PoolingArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildVocabArgs {
    /// Monolingual files, one sentence per line, optionally `lang<TAB>text`.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Language of lines without a tag.
    #[arg(long, default_value = "und")]
    pub lang: String,
    #[arg(long, default_value_t = 1000)]
    pub vocab_size: usize,
    /// Exponent of the per-language sampling smoothing.
    #[arg(long, default_value_t = 0.3)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub char_coverage: f64,
    /// Drop sentences shorter than this many characters.
    #[arg(long, default_value_t = 0)]
    pub min_chars: usize,
    /// Drop sentences longer than this many characters.
    #[arg(long, default_value_t = 5000)]
    pub max_chars: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    pub train_pairs: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_pairs: usize,
    #[arg(long, default_value_t = 2000)]
    pub mono: usize,
    #[arg(long, default_value_t = 500)]
    pub lexicon: usize,
    /// Fraction of training pairs to mispair.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Monolingual text for MLM.
    #[arg(long)]
    pub mono: Option<PathBuf>,
    /// Sentence pairs for TLM.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[command(flatten)]
    pub shape: ModelShape,
    /// Comma-separated layer counts per stage; defaults to L/4,L/2,L when L
    /// is divisible by 4, else L/2,L.
    #[arg(long, value_delimiter = ',')]
    pub stages: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub steps_per_stage: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// MLM updates per cycle.
    #[arg(long, default_value_t = 1)]
    pub mlm_steps: usize,
    /// TLM updates per cycle.
    #[arg(long, default_value_t = 1)]
    pub tlm_steps: usize,
    #[arg(long, default_value_t = 0.2)]
    pub mask_rate: f64,
    #[arg(long, default_value_t = 80)]
    pub mask_cap: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    /// Training pairs: src_lang, tgt_lang, src_text, tgt_text[, score].
    #[arg(long)]
    pub pairs: PathBuf,
    /// Initial encoder (e.g. from pretrain); random init when absent.
    #[arg(long, conflicts_with = "resume")]
    pub init: Option<PathBuf>,
    /// Checkpoint with optimizer state to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub shape: ModelShape,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.3)]
    pub margin: f64,
    #[arg(long, default_value_t = 10.0)]
    pub scale: f64,
    /// Simulated data shards per batch.
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
    /// Rank each shard only against its own targets.
    #[arg(long)]
    pub local_negatives: bool,
    /// Mined hard negatives per source (needs --weak-model).
    #[arg(long, default_value_t = 0, requires = "weak_model")]
    pub hard_negatives: usize,
    #[arg(long)]
    pub weak_model: Option<PathBuf>,
    /// Write checkpoint.ckpt every this many steps (0 = never).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Stop after this many steps of the schedule (for staged runs).
    #[arg(long)]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EncodeArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Sentences, one per line, optionally `lang<TAB>text`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "und")]
    pub lang: String,
    /// Ids are this prefix followed by the line number.
    #[arg(long, default_value = "")]
    pub id_prefix: String,
    /// Output stem: writes <name>.pool and <name>.ids.
    #[arg(long, default_value = "embeddings")]
    pub name: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub ids: PathBuf,
    /// k-means partitions; 0 builds an exact index.
    #[arg(long, default_value_t = 0)]
    pub clusters: usize,
    #[arg(long, default_value_t = 1)]
    pub probes: usize,
    #[arg(long, default_value_t = 10)]
    pub kmeans_iters: usize,
    #[arg(long, default_value = "index")]
    pub name: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub query_ids: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Partitions probed per query (partitioned indexes only).
    #[arg(long, default_value_t = 1)]
    pub probes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum DirectionArg {
    Forward,
    Backward,
    Auto,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MineArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Source-language sentences.
    #[arg(long)]
    pub src: PathBuf,
    /// Target-language sentences.
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long, default_value = "src")]
    pub src_lang: String,
    #[arg(long, default_value = "tgt")]
    pub tgt_lang: String,
    /// Keep pairs with cosine at or above this.
    #[arg(long, default_value_t = 0.6)]
    pub threshold: f64,
    /// Neighbours retrieved per query.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    /// Fraction of deduplicated pairs selected.
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long, value_enum, default_value_t = DirectionArg::Auto)]
    pub direction: DirectionArg,
    /// k-means partitions of the pool index; 0 searches exactly.
    #[arg(long, default_value_t = 0)]
    pub clusters: usize,
    #[arg(long, default_value_t = 1)]
    pub probes: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PoolPair {
    #[arg(long)]
    pub src_pool: PathBuf,
    #[arg(long)]
    pub src_ids: PathBuf,
    #[arg(long)]
    pub tgt_pool: PathBuf,
    #[arg(long)]
    pub tgt_ids: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalP1Args {
    #[command(flatten)]
    pub pools: PoolPair,
    /// Gold TSV: src_id, tgt_id.
    #[arg(long)]
    pub gold: PathBuf,
    /// k-means partitions of the target index; 0 searches exactly.
    #[arg(long, default_value_t = 0)]
    pub clusters: usize,
    #[arg(long, default_value_t = 1)]
    pub probes: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalTatoebaArgs {
    /// `lang=DIR`, where DIR holds src.pool, src.ids, tgt.pool, tgt.ids and gold.tsv.
    #[arg(long = "language", required = true)]
    pub languages: Vec<String>,
    /// `name=lang1,lang2,...`.
    #[arg(long = "group")]
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum SearchDirectionArg {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalBuccArgs {
    #[arg(long)]
    pub gold: PathBuf,
    /// Candidate TSV: src_id, tgt_id, score. Generated from pools when absent.
    #[arg(long, conflicts_with_all = ["src_pool", "src_ids", "tgt_pool", "tgt_ids"])]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub src_pool: Option<PathBuf>,
    #[arg(long)]
    pub src_ids: Option<PathBuf>,
    #[arg(long)]
    pub tgt_pool: Option<PathBuf>,
    #[arg(long)]
    pub tgt_ids: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SearchDirectionArg::Forward)]
    pub direction: SearchDirectionArg,
    /// Candidates kept per query.
    #[arg(long, default_value_t = 1)]
    pub k: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalStsArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// TSV: text_a, text_b, gold score.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, default_value = "und")]
    pub lang: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReportArgs {
    /// metric=value files to merge.
    #[arg(long, required = true, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
}

fn parse(raw: Vec<String>) -> Result<Cli, ExitCode> {
    let args = match config::config_path(&raw) {
        Some(path) => {
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("usage error: cannot read config {}: {e}", path.display());
                    return Err(ExitCode::from(1));
                }
            };
            match config::inject(raw, &text, SUBCOMMANDS) {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("usage error: {e}");
                    return Err(ExitCode::from(1));
                }
            }
        }
        None => raw,
    };
    Cli::try_parse_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                let _ = e.print();
                if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    ExitCode::from(1)
                } else {
                    ExitCode::SUCCESS
                }
            }
            _ => {
                let _ = e.print();
                ExitCode::from(1)
            }
        }
    })
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    // the output directory is the only setting read from the environment
    let level = if cli.global.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
        let names: Vec<String> = Cli::command().get_subcommands().map(|c| c.get_name().to_string()).collect();
        assert_eq!(names, SUBCOMMANDS);
    }

    #[test]
    fn later_flags_override_earlier() {
        let cli = Cli::try_parse_from(["bitext", "train", "--vocab", "v", "--pairs", "p", "--margin", "0.1", "--margin", "0.2"]).unwrap();
        match cli.command {
            Command::Train(t) => assert_eq!(t.margin, 0.2),
            _ => unreachable!(),
        }
    }
}
