mod commands;
mod rundir;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use leaflite::ErrorFamily;

use settings::{PathArg, Switch};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Engine(leaflite::Error),
}

impl From<leaflite::Error> for CliError {
    fn from(e: leaflite::Error) -> Self {
        CliError::Engine(e)
    }
}

impl From<leaflite::WeightError> for CliError {
    fn from(e: leaflite::WeightError) -> Self {
        CliError::Engine(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Engine(e) => match e.family() {
                ErrorFamily::Usage => 2,
                ErrorFamily::Io => 3,
                ErrorFamily::Format => 4,
                ErrorFamily::Numeric => 5,
                ErrorFamily::Shape => 6,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Engine(e) => write!(f, "{e}"),
        }
    }
}

/// Tomato leaf disease engine: CLAHE enhancement, MobileNetV2 features, a
/// trainable classifier head, evaluation metrics, cost accounting and
/// GradCAM.
///
/// Every option can also be given as a LEAFLITE_<NAME> environment variable
/// or as a `name=value` line in the --config file; flags win over the
/// environment, which wins over the file.
///
/// Exit codes: 0 ok, 2 usage, 3 I/O, 4 format, 5 numeric, 6 shape.
#[derive(Debug, Parser)]
#[command(name = "leaflite", version, max_term_width = 100)]
pub struct Cli {
    /// Flat key=value configuration file
    #[arg(long, global = true, env = "LEAFLITE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Parent of the timestamped run directories [default: runs]
    #[arg(long, global = true, env = "LEAFLITE_RUNS_ROOT")]
    pub runs_root: Option<PathArg>,
    /// Exact run directory, replacing the timestamped default
    #[arg(long, global = true, env = "LEAFLITE_RUN_DIR")]
    pub run_dir: Option<PathArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply CLAHE to every image of a class-per-directory tree
    Enhance(EnhanceArgs),
    /// Write a stratified 60/20/20 split manifest
    Split(SplitArgs),
    /// Train the classifier head on a frozen backbone
    Train(TrainArgs),
    /// Evaluate a bundle, optionally over repeated augmented runs
    Eval(EvalArgs),
    /// Classify one image
    Infer(InferArgs),
    /// Parameter, FLOPs, MACs and size accounting for a bundle
    Analyze(AnalyzeArgs),
    /// GradCAM heatmap and overlay for one image
    Gradcam(GradcamArgs),
    /// Write augmented variants of one image
    AugmentPreview(AugmentPreviewArgs),
    /// Write a seeded random backbone weight file
    InitWeights(InitWeightsArgs),
    /// Compare the backbone against golden reference activations
    CheckParity(CheckParityArgs),
}

#[derive(Debug, Args)]
pub struct ClaheArgs {
    /// CLAHE tile grid side (tiles per axis) [default: 7, paper]
    #[arg(long, env = "LEAFLITE_CLAHE_TILES")]
    pub clahe_tiles: Option<usize>,
    /// CLAHE clip limit as a multiple of the uniform bin height [default: 3, paper]
    #[arg(long, env = "LEAFLITE_CLAHE_CLIP")]
    pub clahe_clip: Option<f64>,
    /// CLAHE histogram bins over L in [0, 100] [default: 1024]
    #[arg(long, env = "LEAFLITE_CLAHE_BINS")]
    pub clahe_bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Input tree, one subdirectory per class
    #[arg(long, env = "LEAFLITE_INPUT")]
    pub input: Option<PathArg>,
    /// Output tree (mirrors the input, PNG files)
    #[arg(long, env = "LEAFLITE_OUTPUT")]
    pub output: Option<PathArg>,
    #[command(flatten)]
    pub clahe: ClaheArgs,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset root, one subdirectory per class
    #[arg(long, env = "LEAFLITE_INPUT")]
    pub input: Option<PathArg>,
    /// Split seed [default: 0]
    #[arg(long, env = "LEAFLITE_SEED")]
    pub seed: Option<u64>,
    /// Also copy the manifest here
    #[arg(long, env = "LEAFLITE_OUTPUT")]
    pub output: Option<PathArg>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Split manifest written by `split`
    #[arg(long, env = "LEAFLITE_MANIFEST")]
    pub manifest: Option<PathArg>,
    /// Dataset root the manifest paths are relative to
    #[arg(long, env = "LEAFLITE_DATA_ROOT")]
    pub data_root: Option<PathArg>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Runtime augmentation on or off [default: on, paper]
    #[arg(long, env = "LEAFLITE_AUGMENT")]
    pub augment: Option<Switch>,
    /// Firing probability of each augmentation [default: 0.5]
    #[arg(long, env = "LEAFLITE_AUGMENT_PROB")]
    pub augment_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Backbone weight file (LWTS)
    #[arg(long, env = "LEAFLITE_WEIGHTS")]
    pub weights: Option<PathArg>,
    /// Mini-batch size [default: 16, paper]
    #[arg(long, env = "LEAFLITE_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Epoch limit [default: 1000, paper]
    #[arg(long, env = "LEAFLITE_MAX_EPOCHS")]
    pub max_epochs: Option<usize>,
    /// Initial Adam learning rate [default: 1e-5, paper]
    #[arg(long, env = "LEAFLITE_LR")]
    pub lr: Option<f64>,
    /// Validation-accuracy gain that counts as improvement [default: 1e-4, paper]
    #[arg(long, env = "LEAFLITE_MIN_DELTA")]
    pub min_delta: Option<f64>,
    /// Patient epochs before early stopping [default: 10, paper]
    #[arg(long, env = "LEAFLITE_PATIENCE")]
    pub patience: Option<usize>,
    /// Patient epochs before each learning-rate decay [default: 4]
    #[arg(long, env = "LEAFLITE_LR_PATIENCE")]
    pub lr_patience: Option<usize>,
    /// Learning-rate decay factor [default: 0.1, paper]
    #[arg(long, env = "LEAFLITE_LR_FACTOR")]
    pub lr_factor: Option<f64>,
    /// Dropout rate of the head [default: 0.5]
    #[arg(long, env = "LEAFLITE_DROPOUT")]
    pub dropout: Option<f32>,
    /// Seed for head initialization, shuffling, dropout and augmentation [default: 0]
    #[arg(long, env = "LEAFLITE_SEED")]
    pub seed: Option<u64>,
    /// Apply CLAHE when loading images [default: on, paper]
    #[arg(long, env = "LEAFLITE_CLAHE")]
    pub clahe: Option<Switch>,
    #[command(flatten)]
    pub clahe_params: ClaheArgs,
    #[command(flatten)]
    pub augment: AugmentArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model bundle directory
    #[arg(long, env = "LEAFLITE_BUNDLE")]
    pub bundle: Option<PathArg>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of evaluation runs [default: 100, paper]
    #[arg(long, env = "LEAFLITE_RUNS")]
    pub runs: Option<usize>,
    /// Base seed of the per-run augmentation streams [default: 0]
    #[arg(long, env = "LEAFLITE_SEED")]
    pub seed: Option<u64>,
    /// Split to evaluate: TRAIN, VAL or TEST [default: TEST]
    #[arg(long, env = "LEAFLITE_SPLIT")]
    pub split: Option<leaflite::dataset::Split>,
    #[command(flatten)]
    pub augment: AugmentArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Model bundle directory
    #[arg(long, env = "LEAFLITE_BUNDLE")]
    pub bundle: Option<PathArg>,
    /// Image to classify
    #[arg(long, env = "LEAFLITE_IMAGE")]
    pub image: Option<PathArg>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Model bundle directory
    #[arg(long, env = "LEAFLITE_BUNDLE")]
    pub bundle: Option<PathArg>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    /// Model bundle directory
    #[arg(long, env = "LEAFLITE_BUNDLE")]
    pub bundle: Option<PathArg>,
    /// Image to explain
    #[arg(long, env = "LEAFLITE_IMAGE")]
    pub image: Option<PathArg>,
    /// Target class id [default: the predicted class]
    #[arg(long, env = "LEAFLITE_CLASS")]
    pub class: Option<usize>,
    /// Heatmap opacity in the overlay [default: 0.4]
    #[arg(long, env = "LEAFLITE_ALPHA")]
    pub alpha: Option<f32>,
}

#[derive(Debug, Args)]
pub struct AugmentPreviewArgs {
    /// Source image
    #[arg(long, env = "LEAFLITE_IMAGE")]
    pub image: Option<PathArg>,
    /// Number of variants [default: 8]
    #[arg(long, env = "LEAFLITE_COUNT")]
    pub count: Option<usize>,
    /// Seed [default: 0]
    #[arg(long, env = "LEAFLITE_SEED")]
    pub seed: Option<u64>,
    /// Firing probability of each augmentation [default: 0.5]
    #[arg(long, env = "LEAFLITE_AUGMENT_PROB")]
    pub augment_prob: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    /// Destination weight file
    #[arg(long, env = "LEAFLITE_OUTPUT")]
    pub output: Option<PathArg>,
    /// Seed [default: 0]
    #[arg(long, env = "LEAFLITE_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CheckParityArgs {
    /// Backbone weight file
    #[arg(long, env = "LEAFLITE_WEIGHTS")]
    pub weights: Option<PathArg>,
    /// Golden activation file (fixture_{i}.input / fixture_{i}.feature)
    #[arg(long, env = "LEAFLITE_GOLDEN")]
    pub golden: Option<PathArg>,
    /// Largest tolerated absolute difference [default: 1e-3]
    #[arg(long, env = "LEAFLITE_MAX_ABS")]
    pub max_abs: Option<f64>,
    /// Largest tolerated mean absolute difference [default: 1e-4]
    #[arg(long, env = "LEAFLITE_MEAN_ABS")]
    pub mean_abs: Option<f64>,
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match commands::run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
