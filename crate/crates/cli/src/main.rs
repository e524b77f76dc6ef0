//! `uwrestore`: training, restoration, synthesis, diagnostics and evaluation.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "uwrestore", version, about = "Physics-guided unpaired underwater image restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train both generators and discriminators from a TOML config.
    Train(TrainArgs),
    /// Restore underwater images with a trained checkpoint.
    Restore(RestoreArgs),
    /// Synthesise underwater images from clean ones.
    Degrade(DegradeArgs),
    /// Write a per-image quality report as CSV.
    Eval(EvalArgs),
    /// Dark-channel map, darkest-pixel mask and masked overlay for one image.
    Mask(MaskArgs),
    /// Compose same-named images from several directories into one grid.
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value = "runs/train")]
    pub out_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Also write `<name>_depth.png` (range scaled by 1/6).
    #[arg(long)]
    pub emit_depth: bool,
    /// Also write `<name>_backscatter.png`.
    #[arg(long)]
    pub emit_backscatter: bool,
    /// Side length images are resized to before restoration.
    #[arg(long, default_value_t = uwrestore_core::imaging::DEFAULT_IMAGE_SIZE)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Nine-scalar parameter file applied to every image.
    #[arg(long, conflicts_with = "sample", required_unless_present = "sample")]
    pub params: Option<PathBuf>,
    /// Draw parameters per image from this seed.
    #[arg(long)]
    pub sample: Option<u64>,
    /// `constant:Z`, `gradient`, `gradient:NEAR:FAR` or `file:PATH`.
    #[arg(long, default_value = "gradient")]
    pub depth: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Directory of restorations named like the inputs; adds SSIM and SIFT
    /// match columns.
    #[arg(long)]
    pub restored: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Writes `<prefix>_dcp.png`, `<prefix>_mask.png` and `<prefix>_masked.png`.
    #[arg(long)]
    pub output_prefix: PathBuf,
    #[arg(long, default_value_t = uwrestore_core::dcp::DEFAULT_MASK_FRACTION)]
    pub fraction: f64,
    #[arg(long, default_value_t = uwrestore_core::dcp::DEFAULT_MASK_CAP)]
    pub cap: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// One grid row per directory.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = uwrestore_core::imaging::DEFAULT_IMAGE_SIZE)]
    pub cell: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Train(a) => commands::train::run(&a),
        Command::Restore(a) => commands::restore::run(&a),
        Command::Degrade(a) => commands::degrade::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::Mask(a) => commands::mask::run(&a),
        Command::Grid(a) => commands::grid::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
