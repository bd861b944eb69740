use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "docqa", version, about = "Reading-order document QA pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML file with dataset overrides and endpoint settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,

    /// Worker count for predict and eval.
    #[arg(long, global = true, default_value_t = 4)]
    pub parallelism: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a reading order for every document (writes orders.jsonl).
    Order(OrderArgs),
    /// Build truncated OCR contexts (writes contexts.jsonl).
    Serialize(SerializeArgs),
    /// Query the model for every QA record (writes predictions.jsonl).
    Predict(PredictArgs),
    /// Score predictions (writes scores.jsonl and aggregate.json).
    Eval(EvalArgs),
    /// Diagnostic reports over scored rows (writes analysis.json).
    Analyze(AnalyzeArgs),
    /// Emit a multi-task mixture schedule (writes schedule.jsonl).
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum OrderStrategyArg {
    Standard,
    RasterScan,
    Shuffled,
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: OrderStrategyArg,
    #[arg(long, default_value_t = 0.5)]
    pub threshold_factor: f64,
}

#[derive(Debug, Args)]
pub struct SerializeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub orders: PathBuf,
    /// Dataset whose context budget applies.
    #[arg(long)]
    pub dataset: String,
    /// Override the dataset's context budget.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Separate raster-scan lines with newlines instead of spaces.
    #[arg(long)]
    pub line_breaks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MockRuleArg {
    /// Answer with the gold if its words appear contiguously in the context.
    GoldIfContiguous,
    /// Answer with the last context word.
    EchoLastWord,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub contexts: PathBuf,
    #[arg(long)]
    pub dataset: String,
    #[arg(long, value_enum, default_value = "http")]
    pub backend: BackendArg,
    #[arg(long, value_enum, default_value = "gold-if-contiguous")]
    pub mock_rule: MockRuleArg,
    /// Fixed per-token log-probability for the mock (default: seeded).
    #[arg(long, allow_hyphen_values = true)]
    pub mock_logprob: Option<f64>,
    /// Endpoint URL; overrides the config file.
    #[arg(long, env = "DOCQA_ENDPOINT_URL")]
    pub endpoint: Option<String>,
    /// Skip requesting per-token log-probabilities.
    #[arg(long)]
    pub no_logprobs: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub contexts: PathBuf,
    #[arg(long)]
    pub dataset: String,
    /// Assert the metric; fails if it differs from the dataset's.
    #[arg(long)]
    pub metric: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub dataset: String,
    /// aggregate.json files from runs with different order strategies.
    #[arg(long = "compare")]
    pub compare: Vec<PathBuf>,
    /// Omit the perplexity section instead of requiring ROP on every row.
    #[arg(long)]
    pub no_perplexity: bool,
    /// Also write one CSV per report section.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MixtureArg {
    Uniform,
    Normalized,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// `name=size`, repeated once per dataset.
    #[arg(long = "dataset-size", value_parser = parse_dataset_size, required = true)]
    pub datasets: Vec<(String, usize)>,
    #[arg(long, value_enum)]
    pub strategy: MixtureArg,
    #[arg(long)]
    pub draws: usize,
}

fn parse_dataset_size(s: &str) -> Result<(String, usize), String> {
    let (name, size) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=size, got `{s}`"))?;
    let size = size
        .parse()
        .map_err(|e| format!("bad size in `{s}`: {e}"))?;
    Ok((name.to_string(), size))
}
