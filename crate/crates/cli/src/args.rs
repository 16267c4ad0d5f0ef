use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use opqa::moe::Variant;

#[derive(Debug, Parser)]
#[command(name = "opqa", version, about = "Answer product questions from review opinions")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// TOML file with `[train]` and `[synth]` tables.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read the JSONL tables and write a corpus cache.
    Ingest(IngestArgs),
    /// Detect yes/no questions and label their answers.
    Label(LabelArgs),
    /// Train a model variant on the training split.
    Train(TrainArgs),
    /// Score a model on the held-out split and write metrics.json.
    Eval(EvalArgs),
    /// Rank a product's review sentences for a question.
    Query(QueryArgs),
    /// Generate a synthetic corpus with known ground truth.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding products.jsonl, questions.jsonl, answers.jsonl and reviews.jsonl.
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub products: Option<PathBuf>,
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub answers: Option<PathBuf>,
    #[arg(long)]
    pub reviews: Option<PathBuf>,
    /// Output cache file.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Drop common function words while tokenizing.
    #[arg(long)]
    pub drop_stopwords: bool,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Corpus cache to label.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Seed answers ({"answer_text", "label"} per line) for the labeler.
    /// Defaults to the seed set shipped with the tool.
    #[arg(long, conflicts_with = "from_labels")]
    pub seeds: Option<PathBuf>,
    /// Take labels from an existing labels.jsonl instead of training a labeler.
    #[arg(long)]
    pub from_labels: Option<PathBuf>,
    /// Share of scored answers kept, most confident first.
    #[arg(long, default_value_t = opqa::labeling::DEFAULT_KEEP_FRACTION)]
    pub keep_fraction: f64,
    /// Apply the keep fraction within each category instead of globally.
    #[arg(long)]
    pub per_category: bool,
    /// Labeled cache (defaults to overwriting --corpus).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Also write the kept labels as JSONL.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// moe, kl-moe, em-moe, em-moe-s, s-moe, m-moe or m-moe-s.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Model file to write.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub em_rounds: Option<usize>,
    #[arg(long, default_value_t = opqa::corpus::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the metrics records.
    #[arg(long, short, default_value = "metrics.json")]
    pub out: PathBuf,
    /// Sampled non-answers per answer for AUC_o.
    #[arg(long, default_value_t = 1)]
    pub neg_samples: usize,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub product_id: String,
    #[arg(long)]
    pub question: String,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the JSONL tables.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub questions: Option<usize>,
    #[arg(long)]
    pub sentences: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Target share of ambiguous questions, or "none" to keep the label counts as configured.
    /// Defaults to the config file's value, else 0.14.
    #[arg(long, value_parser = parse_rate)]
    pub ambiguity: Option<RateOrNone>,
    /// Share of questions generated as open-ended.
    #[arg(long)]
    pub open_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOrNone(pub Option<f64>);

fn parse_rate(s: &str) -> Result<RateOrNone, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(RateOrNone(None));
    }
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is neither a number nor `none`"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(format!("{v} is outside [0, 1]"));
    }
    Ok(RateOrNone(Some(v)))
}
