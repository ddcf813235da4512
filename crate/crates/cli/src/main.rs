//! `sra`: train and inspect attention-supervised toxicity classifiers.

mod commands;
mod data;
mod output;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "sra", version, about = "Supervised rational attention lab")]
struct Cli {
    /// TOML file overriding profile defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["desk", "paper-en", "paper-pt"])]
    profile: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted-rationale corpus with a fixed split
    Synth(SynthArgs),
    /// Train one model per seed and evaluate it on the test split
    Train(TrainArgs),
    /// Evaluate a trained run, or recompute a report from saved predictions
    Eval(EvalArgs),
    /// Render attention heatmaps and extracted rationales
    Explain(ExplainArgs),
    /// Sweep alpha, supervised layer and head selection
    Ablate(AblateArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Pick by extension and content
    Auto,
    Hatexplain,
    Hatebr,
    /// This tool's own dataset files
    Native,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Train,
    Validation,
    Test,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    format: Format,
    /// Split file; without one a stratified split is drawn from the seed
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 250)]
    validation: usize,
    #[arg(long, default_value_t = 250)]
    test: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Overrides the configured alignment weight
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated seeds; more than one gives a mean/std summary
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of a finished single-seed training run
    #[arg(long, required_unless_present = "offline")]
    run: Option<PathBuf>,
    #[arg(long, required_unless_present = "offline")]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    format: Format,
    #[arg(long, value_enum, default_value_t = Which::Test)]
    which: Which,
    /// Saved per-instance predictions (JSON lines); no model is needed and
    /// faithfulness is left out
    #[arg(long, conflicts_with_all = ["run", "data"], requires = "classes")]
    offline: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Auto)]
    format: Format,
    #[arg(long, value_enum, default_value_t = Which::Test)]
    which: Which,
    /// Example ids to show; defaults to the first `--limit` of the split
    #[arg(long, value_delimiter = ',')]
    ids: Vec<String>,
    #[arg(long, default_value_t = 10)]
    limit: usize,
    /// above-uniform, top-k:<ratio> or absolute:<threshold>
    #[arg(long)]
    strategy: Option<String>,
    /// Skip the ANSI heatmaps on stdout
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,1,10,100")]
    alpha: Vec<f64>,
    /// Supervised layers; defaults to the configured one
    #[arg(long, value_delimiter = ',')]
    layers: Vec<usize>,
    /// Head indices or `mean`; defaults to the configured one
    #[arg(long, value_delimiter = ',')]
    head: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
