use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use coherence_core::analysis::Pairing;
use coherence_core::corpus::{CorpusFormat, Unit};
use coherence_core::sampler::Strategy;

/// Measure the semantic coherence of dialogues against a knowledge graph and embeddings.
#[derive(Parser, Debug)]
#[command(name = "coherence", version, propagate_version = true)]
pub struct Cli {
    /// TOML file with [model], [paths], [sample] and [corpus] sections; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; 1 is the determinism baseline, 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest, filter and summarize dialogue corpora.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Link entity mentions with a gazetteer or a remote linker.
    Annotate(AnnotateArgs),
    /// Inspect knowledge graphs.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Induce per-dialogue subgraphs of top-k shortest paths.
    Paths(PathsArgs),
    /// Inspect and cache embedding files.
    #[command(subcommand)]
    Embed(EmbedCommand),
    /// Build a labelled dataset with one negative per positive.
    Sample(SampleArgs),
    /// Train a classifier on a dataset.
    Train(TrainArgs),
    /// Evaluate a trained classifier on a test split.
    Eval(EvalArgs),
    /// Score a single sequence.
    Score(ScoreArgs),
    /// Write analysis reports as CSV.
    #[command(subcommand)]
    Report(ReportCommand),
}

#[derive(Subcommand, Debug)]
pub enum CorpusCommand {
    /// Read raw dialogues and write them as jsonl.
    Ingest(IngestArgs),
    /// Keep dialogues whose two most active participants each introduce enough entities.
    Filter(FilterArgs),
    /// Print corpus statistics as JSON.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Directory of per-dialogue TSV files, or a jsonl file.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "tsv")]
    pub format: CorpusFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Entities each participant must introduce [default: 3]
    #[arg(long)]
    pub min_new_entities: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Also write the statistics to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    /// Tab-separated `surface<TAB>iri` file.
    #[arg(long, required_unless_present = "endpoint", conflicts_with = "endpoint")]
    pub gazetteer: Option<PathBuf>,
    /// URL of a linker answering `start<TAB>end<TAB>iri` lines.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Request timeout for --endpoint, in milliseconds.
    #[arg(long, default_value_t = 10_000)]
    pub endpoint_timeout_ms: u64,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum KgCommand {
    /// Load a triple file and print its size and degree histogram.
    Load(KgLoadArgs),
}

#[derive(Args, Debug)]
pub struct KgLoadArgs {
    /// N-Triples (`.nt`) or tab-separated (`.tsv`) triples.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Include the degree histogram.
    #[arg(long)]
    pub stats: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
pub struct PathFlags {
    /// Paths kept per query [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// Longest path, in edges [default: 9]
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Per-query deadline [default: 2000]
    #[arg(long, conflicts_with = "no_timeout")]
    pub timeout_ms: Option<u64>,
    /// Run every query to completion.
    #[arg(long)]
    pub no_timeout: bool,
    /// Follow edges subject-to-object only.
    #[arg(long)]
    pub directed: bool,
    /// Never route paths through nodes of a higher degree.
    #[arg(long)]
    pub max_degree: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PathsArgs {
    #[arg(long)]
    pub kg: PathBuf,
    /// Annotated corpus jsonl.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub query: PathFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum EmbedCommand {
    /// Vocabulary coverage of an embedding file.
    Stats(EmbedStatsArgs),
    /// Convert a text embedding file to the binary cache format.
    Cache(EmbedCacheArgs),
}

#[derive(Args, Debug)]
pub struct EmbedStatsArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    /// `vocab.json` written by `sample`.
    #[arg(long)]
    pub vocab: PathBuf,
    /// List at most this many missing tokens.
    #[arg(long, default_value_t = 20)]
    pub show_missing: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedCacheArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// ruf, vod, sqd, vsp or hsp [default: ruf]
    #[arg(long)]
    pub strategy: Option<Strategy>,
    /// words or entities [default: entities]
    #[arg(long)]
    pub unit: Option<Unit>,
    /// [default: 42]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Train/validation/test fractions, e.g. `0.7,0.1,0.2` [default: 0.7,0.1,0.2]
    #[arg(long)]
    pub split: Option<String>,
    /// Annotated corpus jsonl.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub num_filters: Option<usize>,
    #[arg(long)]
    pub filter_width: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Update embedding rows during training.
    #[arg(long)]
    pub train_embeddings: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `sample`.
    #[arg(long)]
    pub data: PathBuf,
    /// Embedding file (text, or the binary cache).
    #[arg(long)]
    pub vectors: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled samples jsonl.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Utterance text for word models, or whitespace-separated IRIs for entity models.
    #[arg(long)]
    pub sequence: String,
}

#[derive(Subcommand, Debug)]
pub enum ReportCommand {
    /// Histograms of pairwise entity distances, positives against negatives.
    Distances(DistancesArgs),
    /// Accuracy of several models on several test sets.
    Matrix(MatrixArgs),
    /// Most frequent mentioned entities, context entities and relations.
    Context(ContextArgs),
    /// Embedding and convolution activations of one sequence.
    Heatmap(HeatmapArgs),
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricArg {
    Cosine,
    Path,
}

#[derive(Args, Debug)]
pub struct DistancesArgs {
    /// Entity dataset directory written by `sample`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "cosine")]
    pub metric: MetricArg,
    /// Entity embeddings, for the cosine metric.
    #[arg(long, required_if_eq("metric", "cosine"))]
    pub vectors: Option<PathBuf>,
    /// Knowledge graph, for the path metric.
    #[arg(long, required_if_eq("metric", "path"))]
    pub kg: Option<PathBuf>,
    /// consecutive or all-pairs
    #[arg(long, default_value = "consecutive")]
    pub pairing: Pairing,
    #[arg(long, default_value_t = coherence_core::analysis::COSINE_BIN_WIDTH)]
    pub bin_width: f64,
    /// Restrict to one split (train, valid or test); all splits by default.
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub query: PathFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MatrixArgs {
    /// `embedding:strategy:checkpoint`, repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Dataset directory per test strategy, repeatable.
    #[arg(long = "test", required = true)]
    pub tests: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ContextArgs {
    /// Subgraphs jsonl written by `paths`.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sequence: String,
    /// Output prefix; `.embedding.csv` and `.conv.csv` are appended.
    #[arg(long)]
    pub out: PathBuf,
}
