//! Command-line front end. [`run`] parses arguments, dispatches and maps
//! errors to exit codes: 0 success, 1 usage or validation error, 2 runtime
//! error.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "styleaug",
    about = "Style augmentation: train, stylize, augment and run desk experiments",
    disable_version_flag = true,
    arg_required_else_help = true
)]
pub struct Cli {
    /// Print artifact and file-format versions as JSON and exit.
    #[arg(long, global = true)]
    pub version: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Validate and print the resolved plan without touching weights or data.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

/// Overrides for the style augmentation weights.
#[derive(Debug, Clone, Default, Args)]
pub struct WeightArgs {
    #[arg(long)]
    pub transformer: Option<PathBuf>,
    #[arg(long)]
    pub predictor: Option<PathBuf>,
    #[arg(long)]
    pub distribution: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DatasetArgs {
    /// Dataset directory written by `build-dataset`; generated in memory
    /// when absent.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the desk domains to disk.
    BuildDataset {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Embed every image of a directory with the style predictor.
    EmbedCorpus {
        #[arg(long)]
        styles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the style embedding distribution to a corpus.
    FitDist {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Diagonal jitter; defaults to a small fraction of the mean variance.
        #[arg(long)]
        jitter: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Restyle one image.
    Stylize {
        #[arg(long)]
        content: PathBuf,
        /// Style image; a random embedding is drawn when absent.
        #[arg(long)]
        style: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Augment every image of a directory.
    AugmentDir {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// none, trad, style or both.
        #[arg(long, default_value = "style")]
        arm: String,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train the transformer and predictor on the desk domains and fit the
    /// style distribution.
    TrainTransformer {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Train one classifier with one augmentation arm.
    TrainClassifier {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "none")]
        arm: String,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Sweep augmentation probability and strength.
    GridSearch {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Skip the unaugmented reference runs.
        #[arg(long)]
        no_baseline: bool,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Compare no augmentation, color jitter and style augmentation.
    AblateJitter {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[command(flatten)]
        dataset: DatasetArgs,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Measure per-image augmentation latency.
    Throughput {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long, default_value = "style")]
        arm: String,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
        #[command(flatten)]
        weights: WeightArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate result files into a CSV, a summary and a curve figure.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Machine-readable version information.
pub fn version_json() -> String {
    serde_json::json!({
        "name": "styleaug",
        "version": env!("CARGO_PKG_VERSION"),
        "library": styleaug::VERSION,
        "weight_format": styleaug::archive::FORMAT_VERSION,
    })
    .to_string()
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_OK,
                _ => EXIT_VALIDATION,
            };
        }
    };
    if cli.version {
        println!("{}", version_json());
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see --help");
        return EXIT_VALIDATION;
    };
    match commands::dispatch(command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}
