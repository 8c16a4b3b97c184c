//! `foilgen` command line interface.

mod commands;
mod layout;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use foilgen::Error;

#[derive(Debug, Parser)]
#[command(name = "foilgen", version, about = "Valid-by-construction airfoil generation")]
pub struct Cli {
    /// TOML config file; keys override the selected preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for datasets, checkpoints and reports.
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Builds the NACA dataset.
    BuildDataset,
    /// Adds jittered, relabelled copies of training records.
    Augment(AugmentArgs),
    /// Trains the neighbourhood tokenizer.
    TrainRvq(DataArgs),
    /// Trains the autoencoder.
    TrainAe(DataArgs),
    /// Trains the conditional denoiser on autoencoder embeddings.
    TrainDiffusion(DataArgs),
    /// Samples airfoils for the given classes.
    Generate(SampleArgs),
    /// Reconstruction and conditional accuracy reports.
    Evaluate(EvalArgs),
    /// Inverse design from generated versus random starting shapes.
    Optimize(OptimizeArgs),
    /// Renders a profile, scatter or loss CSV as SVG.
    Plot(PlotArgs),
    /// Re-validates every record of a dataset.
    Validate(DataArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory (default: <out-dir>/dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory (default: <out-dir>/dataset-augmented).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Overrides the config augmentation factor.
    #[arg(long)]
    pub factor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Comma-separated class ids, `null`, or `all`.
    #[arg(long, default_value = "all")]
    pub classes: String,
    /// Guidance weight (default: config eval omega).
    #[arg(long)]
    pub omega: Option<f64>,
    /// Samples per class.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Directory holding the checkpoints (default: <out-dir>).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Samples per class (default: config).
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub omega: Option<f64>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Initialization strategies to compare.
    #[arg(long, value_delimiter = ',', default_value = "generated,random")]
    pub init: Vec<String>,
    /// Number of targets (default: config).
    #[arg(long)]
    pub targets: Option<usize>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlotInput {
    /// `x,y` rows of one closed profile.
    Profile,
    /// Conditional scatter CSV written by `evaluate`.
    Scatter,
    /// Loss CSV written by a training command.
    Curves,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotInput,
    /// Input CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Output SVG (default: input with `.svg` extension).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Exit status for a pipeline error: 2 for invalid data, 3 for I/O and
/// unreadable files, 4 for configuration problems.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 4,
        Error::Io { .. } | Error::Format(_) | Error::Json(_) => 3,
        Error::Domain(_)
        | Error::Envelope { .. }
        | Error::Extraction { .. }
        | Error::Shape(_)
        | Error::Validation(_) => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
