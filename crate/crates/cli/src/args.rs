use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use viscon::alignment::{MapDirection, Preprocess};
use viscon::concreteness::CiMethod;
use viscon::{FeatureFormat, Metric, SearchMode};

#[derive(Debug, Parser, Serialize)]
#[command(name = "viscon", version, about = "Visual concreteness and cross-modal retrieval analysis")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    /// Seed for every randomized stage.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true, env = "VC_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    /// Directory for outputs and run.json.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn ext(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build and save a nearest-neighbor index over image features.
    Index(IndexArgs),
    /// Score discrete concepts (words) from a concept file.
    Score(ScoreArgs),
    /// Score continuous concepts (topics) from a topic matrix.
    TopicsScore(TopicsScoreArgs),
    /// Train an alignment model and evaluate bidirectional retrieval.
    Align(AlignArgs),
    /// Evaluate a saved alignment model.
    Eval(EvalArgs),
    /// Retrievability and its correlation with concreteness and frequency.
    Analyze(AnalyzeArgs),
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Stability of concreteness rankings across neighborhood sizes.
    Report(ReportArgs),
}

pub fn existing_file(s: &str) -> Result<PathBuf, String> {
    let p = PathBuf::from(s);
    if p.is_file() {
        Ok(p)
    } else {
        Err(format!("file not found: {s}"))
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

fn nonnegative_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a nonnegative number, got {s:?}")),
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1), got {s:?}")),
    }
}

fn percent(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 100.0 => Ok(v),
        _ => Err(format!("expected a percentage in (0, 100], got {s:?}")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FeatureSource {
    /// Image feature file (.vcf binary or .csv).
    #[arg(long, value_parser = existing_file)]
    pub features: PathBuf,
    /// Override format detection from the extension.
    #[arg(long)]
    pub features_format: Option<FeatureFormat>,
}

impl FeatureSource {
    pub fn format(&self) -> FeatureFormat {
        self.features_format.unwrap_or_else(|| FeatureFormat::from_path(&self.features))
    }
}

#[derive(Debug, Args, Serialize)]
pub struct KnnArgs {
    /// Neighbors per image.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub k: Option<u32>,
    #[arg(long, default_value = "cosine")]
    pub metric: Metric,
    #[arg(long, default_value = "approx")]
    pub mode: SearchMode,
    /// Trees in the approximate forest.
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    pub trees: u32,
    /// Distinct candidates examined per approximate query.
    #[arg(long, default_value_t = 2000, value_parser = clap::value_parser!(u32).range(1..))]
    pub budget: u32,
    /// Neighbor-of-neighbor refinement passes after the forest search.
    #[arg(long, default_value_t = 1)]
    pub refine_rounds: u32,
    /// Count each image as its own neighbor.
    #[arg(long)]
    pub include_self: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct IndexArgs {
    #[command(flatten)]
    pub source: FeatureSource,
    #[command(flatten)]
    pub knn: KnnArgs,
    /// Index file to write (default: <out-dir>/index.vcann).
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

/// Either a saved index or features to index on the fly.
#[derive(Debug, Args, Serialize)]
pub struct NeighborSource {
    /// Saved index file.
    #[arg(long, value_parser = existing_file, conflicts_with = "features")]
    pub index: Option<PathBuf>,
    /// Image feature file to index on the fly.
    #[arg(long, value_parser = existing_file, required_unless_present = "index")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub features_format: Option<FeatureFormat>,
    #[command(flatten)]
    pub knn: KnnArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CiArgs {
    #[arg(long, default_value = "none")]
    pub ci: CiMethod,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95, value_parser = fraction)]
    pub level: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub neighbors: NeighborSource,
    /// JSON Lines concept file: {"image": id, "tokens": [...]}.
    #[arg(long, value_parser = existing_file)]
    pub concepts: PathBuf,
    /// Drop words attached to fewer images.
    #[arg(long, default_value_t = 100)]
    pub min_support: usize,
    #[command(flatten)]
    pub ci: CiArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TopicsScoreArgs {
    #[command(flatten)]
    pub neighbors: NeighborSource,
    /// Topic CSV: id,<topic>,...
    #[arg(long, value_parser = existing_file)]
    pub topics: PathBuf,
    #[command(flatten)]
    pub ci: CiArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Np,
    Ls,
    Ns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapDirections {
    Both,
    ImageToText,
    TextToImage,
}

impl MapDirections {
    pub fn list(self) -> Vec<MapDirection> {
        match self {
            MapDirections::Both => vec![MapDirection::ImageToText, MapDirection::TextToImage],
            MapDirections::ImageToText => vec![MapDirection::ImageToText],
            MapDirections::TextToImage => vec![MapDirection::TextToImage],
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct PairArgs {
    #[arg(long, value_parser = existing_file)]
    pub images: PathBuf,
    #[arg(long, value_parser = existing_file)]
    pub texts: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    #[command(flatten)]
    pub pair: PairArgs,
    #[arg(long, value_enum)]
    pub algo: Algo,
    /// Train/test split as JSON {"train": [ids], "test": [ids]}.
    #[arg(long, value_parser = existing_file, conflicts_with = "folds")]
    pub split: Option<PathBuf>,
    /// Test share of a seeded random split when no split file is given.
    #[arg(long, default_value_t = 0.2, value_parser = fraction)]
    pub test_fraction: f64,
    /// Cross-validation folds instead of a single split.
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    pub folds: Option<u32>,
    /// Metadata CSV with an `id` column and group columns.
    #[arg(long, value_parser = existing_file)]
    pub groups: Option<PathBuf>,
    /// Column of the metadata CSV whose values must not straddle a split.
    #[arg(long, requires = "groups")]
    pub group_by: Option<String>,
    /// Ridge weight(s) for LS; several values are chosen among on validation.
    #[arg(long = "lambda", value_parser = nonnegative_f64, num_args = 1.., default_values_t = vec![0.1, 1.0, 10.0, 100.0])]
    pub lambdas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = MapDirections::Both)]
    pub map_direction: MapDirections,
    #[arg(long, default_value = "auto")]
    pub preprocess: Preprocess,
    /// Training pairs averaged per NP query.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub neighbors: u32,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..))]
    pub shared_dim: u32,
    #[arg(long, default_value_t = 0.2, value_parser = positive_f64)]
    pub alpha: f64,
    #[arg(long, default_value_t = 60, value_parser = clap::value_parser!(u32).range(1..))]
    pub epochs: u32,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u32).range(1..))]
    pub batch: u32,
    #[arg(long, default_value_t = 0.5, value_parser = positive_f64)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: u32,
    /// Model file to write (default: <out-dir>/model.vcaln).
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long, value_parser = existing_file)]
    pub model: PathBuf,
    #[command(flatten)]
    pub pair: PairArgs,
    /// Evaluate only the test ids of this split (default: every row).
    #[arg(long, value_parser = existing_file)]
    pub split: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Evaluation CSV (or JSON) from `align` or `eval`.
    #[arg(long = "eval", value_parser = existing_file)]
    pub eval: PathBuf,
    /// Affinity file: concept JSON Lines or topic CSV.
    #[arg(long, value_parser = existing_file)]
    pub affinity: PathBuf,
    /// Concreteness report (CSV or JSON) from `score` or `topics-score`.
    #[arg(long, value_parser = existing_file)]
    pub concreteness: PathBuf,
    /// External per-concept scores: CSV concept,score.
    #[arg(long, value_parser = existing_file)]
    pub external: Option<PathBuf>,
    /// Retrieval threshold in percent.
    #[arg(long, default_value_t = 1.0, value_parser = percent)]
    pub p: f64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(2..))]
    pub bins: u32,
    /// Regress on ln(1 + x).
    #[arg(long)]
    pub log_x: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Benchmark,
    Linear,
    TwoClusters,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Benchmark)]
    pub kind: SynthKind,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub image_dim: Option<usize>,
    #[arg(long)]
    pub text_dim: Option<usize>,
    /// Words (benchmark).
    #[arg(long)]
    pub words: Option<usize>,
    /// Image clusters (benchmark).
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Latent dimensionality (linear).
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Text noise standard deviation.
    #[arg(long, value_parser = nonnegative_f64)]
    pub noise: Option<f64>,
    /// Images per concept (two-clusters).
    #[arg(long)]
    pub support: Option<usize>,
    /// Test share of the emitted split.json.
    #[arg(long, default_value_t = 0.2, value_parser = fraction)]
    pub test_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[command(flatten)]
    pub neighbors: NeighborSource,
    #[arg(long, value_parser = existing_file)]
    pub concepts: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub min_support: usize,
    /// Neighborhood sizes to compare.
    #[arg(long, value_delimiter = ',', default_values_t = vec![25, 50, 100])]
    pub ks: Vec<usize>,
}
